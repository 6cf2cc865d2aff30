#pragma once
// Reproducible long-tailed instance datasets without images. Class train
// counts follow a rank power law, the balanced val split keeps per-class
// accuracy measurable, and a frozen random projection over (latent, box
// geometry, IoU) stands in for the backbone + RoI feature extractor. The
// mapping is bitwise-reproducible for a fixed seed, which is what justifies
// storing and reusing extracted features across training iterations.

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <istream>
#include <ostream>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "loce/box_geometry.hpp"
#include "loce/hashing.hpp"

namespace loce {

enum class Split { Train, Val };
enum class ClassGroup { Rare, Common, Frequent };

inline const char* group_name(ClassGroup g) {
    switch (g) {
        case ClassGroup::Rare: return "rare";
        case ClassGroup::Common: return "common";
        default: return "frequent";
    }
}

struct WorldSpec {
    std::size_t num_classes = 50;
    double zipf_exponent = 2.5;
    std::size_t total_instances = 20000;  // train budget; val is extra
    std::size_t feature_dim = 32;
    double cluster_spread = 0.35;
    double inter_class_separation = 0.5;  // min pairwise prototype angle, radians
    double observation_noise = 0.02;
    std::size_t val_per_class = 40;
    std::uint64_t seed = 1;

    void validate() const {
        if (num_classes < 2) throw std::invalid_argument("world: need at least 2 classes");
        if (total_instances < num_classes)
            throw std::invalid_argument("world: total_instances must cover every class");
        if (!(zipf_exponent >= 0.0)) throw std::invalid_argument("world: zipf exponent < 0");
        if (feature_dim == 0) throw std::invalid_argument("world: feature_dim must be positive");
        if (!(cluster_spread > 0.0)) throw std::invalid_argument("world: cluster_spread <= 0");
        if (!(inter_class_separation > 0.0))
            throw std::invalid_argument("world: inter_class_separation <= 0");
        if (!(observation_noise >= 0.0)) throw std::invalid_argument("world: negative noise");
        if (val_per_class == 0) throw std::invalid_argument("world: val_per_class must be >= 1");
    }
};

struct Instance {
    std::size_t id = 0;  // unique across splits; keys the observation noise
    std::size_t class_label = 0;
    Box gt_box;
    Eigen::VectorXd latent;
    Split split = Split::Train;
};

namespace detail {

inline Eigen::VectorXd gaussian_vector(std::size_t n, std::mt19937_64& rng) {
    std::normal_distribution<double> g(0.0, 1.0);
    Eigen::VectorXd v(static_cast<Eigen::Index>(n));
    for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = g(rng);
    return v;
}

inline std::string format_g17(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

}  // namespace detail

class World {
public:
    static World generate(const WorldSpec& spec) {
        spec.validate();
        World w;
        w.spec_ = spec;
        w.compute_counts();
        w.sample_prototypes();
        w.sample_projection();
        w.sample_instances();
        w.assign_groups();
        return w;
    }

    const WorldSpec& spec() const { return spec_; }
    const std::vector<Instance>& train() const { return train_; }
    const std::vector<Instance>& val() const { return val_; }
    const std::vector<long long>& train_counts() const { return counts_; }
    const std::vector<Eigen::VectorXd>& prototypes() const { return prototypes_; }
    std::size_t background_label() const { return spec_.num_classes; }

    ClassGroup group(std::size_t cls) const {
        if (cls >= groups_.size()) throw std::out_of_range("world: class out of range");
        return groups_[cls];
    }
    double rare_threshold() const { return rare_threshold_; }
    double common_threshold() const { return common_threshold_; }

    // Frozen feature extractor: random projection of the instance latent
    // concatenated with the box-relative geometry (dx,dy,dw,dh) and the IoU
    // against the ground-truth box. Observation noise is keyed by (world
    // seed, instance id, geometry), so identical inputs always produce
    // identical features regardless of call order.
    Eigen::VectorXd extract_feature(const Instance& instance, const Box& box,
                                    bool with_noise = true) const {
        const double overlap = iou(box, instance.gt_box);
        if (overlap <= 0.0)
            throw std::invalid_argument("extract_feature: box does not overlap ground truth");
        const RegressionTarget t = encode_target(box, instance.gt_box);

        Eigen::VectorXd in(static_cast<Eigen::Index>(spec_.feature_dim) + 5);
        in.head(instance.latent.size()) = instance.latent;
        const Eigen::Index d = instance.latent.size();
        in[d + 0] = t.dx;
        in[d + 1] = t.dy;
        in[d + 2] = t.dw;
        in[d + 3] = t.dh;
        in[d + 4] = overlap;

        Eigen::VectorXd feature = projection_ * in;
        if (with_noise && spec_.observation_noise > 0.0) {
            std::uint64_t key = derive_seed(spec_.seed, 0xFEA7);
            key = hash_combine(key, instance.id);
            key = hash_combine(key, double_bits(t.dx));
            key = hash_combine(key, double_bits(t.dy));
            key = hash_combine(key, double_bits(t.dw));
            key = hash_combine(key, double_bits(t.dh));
            key = hash_combine(key, double_bits(overlap));
            std::mt19937_64 rng(key);
            feature += spec_.observation_noise * detail::gaussian_vector(spec_.feature_dim, rng);
        }
        return feature;
    }

    struct BackgroundSample {
        Eigen::VectorXd feature;
        Eigen::VectorXd latent;
        std::size_t label = 0;
    };

    // Off-prototype latent (kept at distance > 3 * cluster_spread from every
    // prototype) pushed through the same projection with zeroed geometry and
    // zero IoU. Noise comes from the caller's stream.
    BackgroundSample background_sample(std::mt19937_64& rng, bool with_noise = true) const {
        BackgroundSample out;
        out.label = background_label();
        out.latent = background_latent(rng);
        Eigen::VectorXd in = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(spec_.feature_dim) + 5);
        in.head(out.latent.size()) = out.latent;
        out.feature = projection_ * in;
        if (with_noise && spec_.observation_noise > 0.0)
            out.feature += spec_.observation_noise * detail::gaussian_vector(spec_.feature_dim, rng);
        return out;
    }

    Eigen::VectorXd background_latent(std::mt19937_64& rng) const {
        std::uniform_real_distribution<double> radius(1.5, 3.0);
        const double min_dist = 3.0 * spec_.cluster_spread;
        for (int attempt = 0; attempt < 10000; ++attempt) {
            Eigen::VectorXd u = detail::gaussian_vector(spec_.feature_dim, rng);
            u *= radius(rng) / u.norm();
            double nearest = std::numeric_limits<double>::infinity();
            for (const auto& p : prototypes_) nearest = std::min(nearest, (u - p).norm());
            if (nearest > min_dist) return u;
        }
        throw std::runtime_error("background_sample: rejection sampling failed; "
                                 "cluster_spread too large for the prototype layout");
    }

    std::uint64_t prototypes_digest() const {
        std::string text;
        for (const auto& p : prototypes_)
            for (Eigen::Index i = 0; i < p.size(); ++i) {
                text += detail::format_g17(p[i]);
                text += ';';
            }
        return fnv1a64(text);
    }

    // --- dataset files -----------------------------------------------------

    void export_csv(std::ostream& os) const {
        os << "id,split,class,x1,y1,x2,y2";
        for (std::size_t i = 0; i < spec_.feature_dim; ++i) os << ",l" << i;
        os << "\n";
        auto write = [&](const Instance& inst) {
            os << inst.id << ',' << (inst.split == Split::Train ? "train" : "val") << ','
               << inst.class_label << ',' << detail::format_g17(inst.gt_box.x1) << ','
               << detail::format_g17(inst.gt_box.y1) << ',' << detail::format_g17(inst.gt_box.x2)
               << ',' << detail::format_g17(inst.gt_box.y2);
            for (Eigen::Index i = 0; i < inst.latent.size(); ++i)
                os << ',' << detail::format_g17(inst.latent[i]);
            os << '\n';
        };
        for (const auto& inst : train_) write(inst);
        for (const auto& inst : val_) write(inst);
    }

    nlohmann::json sidecar_json() const {
        nlohmann::json j;
        j["schema"] = "loce.dataset.v1";
        j["spec"] = {{"num_classes", spec_.num_classes},
                     {"zipf_exponent", spec_.zipf_exponent},
                     {"total_instances", spec_.total_instances},
                     {"feature_dim", spec_.feature_dim},
                     {"cluster_spread", spec_.cluster_spread},
                     {"inter_class_separation", spec_.inter_class_separation},
                     {"observation_noise", spec_.observation_noise},
                     {"val_per_class", spec_.val_per_class},
                     {"seed", spec_.seed}};
        j["train_counts"] = counts_;
        j["group_thresholds"] = {{"rare_max", rare_threshold_}, {"common_max", common_threshold_}};
        std::vector<std::string> groups;
        for (auto g : groups_) groups.emplace_back(group_name(g));
        j["groups"] = groups;
        char buf[32];
        std::snprintf(buf, sizeof(buf), "%016llx",
                      static_cast<unsigned long long>(prototypes_digest()));
        j["prototypes_digest"] = std::string(buf);
        return j;
    }

    void export_sidecar(std::ostream& os) const { os << sidecar_json().dump(2) << "\n"; }

    // Rebuilds the world from a sidecar + instance CSV: prototypes and the
    // projection are regenerated from the recorded seed (and checked against
    // the recorded digest); instances are taken from the CSV.
    static World import_files(std::istream& csv, std::istream& sidecar) {
        nlohmann::json j = nlohmann::json::parse(sidecar);
        if (j.value("schema", "") != "loce.dataset.v1")
            throw std::runtime_error("dataset sidecar: unknown schema");
        const auto& s = j.at("spec");
        WorldSpec spec;
        spec.num_classes = s.at("num_classes").get<std::size_t>();
        spec.zipf_exponent = s.at("zipf_exponent").get<double>();
        spec.total_instances = s.at("total_instances").get<std::size_t>();
        spec.feature_dim = s.at("feature_dim").get<std::size_t>();
        spec.cluster_spread = s.at("cluster_spread").get<double>();
        spec.inter_class_separation = s.at("inter_class_separation").get<double>();
        spec.observation_noise = s.at("observation_noise").get<double>();
        spec.val_per_class = s.at("val_per_class").get<std::size_t>();
        spec.seed = s.at("seed").get<std::uint64_t>();
        spec.validate();

        World w;
        w.spec_ = spec;
        w.compute_counts();
        w.sample_prototypes();
        w.sample_projection();
        {
            char buf[32];
            std::snprintf(buf, sizeof(buf), "%016llx",
                          static_cast<unsigned long long>(w.prototypes_digest()));
            if (j.at("prototypes_digest").get<std::string>() != buf)
                throw std::runtime_error("dataset sidecar: prototype digest mismatch "
                                         "(seed or generator changed)");
        }
        w.read_instances_csv(csv);
        w.assign_groups();
        return w;
    }

private:
    void compute_counts() {
        const std::size_t C = spec_.num_classes;
        std::vector<double> raw(C);
        double total_raw = 0.0;
        for (std::size_t c = 0; c < C; ++c) {
            raw[c] = std::pow(static_cast<double>(c + 1), -spec_.zipf_exponent);
            total_raw += raw[c];
        }
        counts_.resize(C);
        const double scale = static_cast<double>(spec_.total_instances) / total_raw;
        for (std::size_t c = 0; c < C; ++c)
            counts_[c] = std::max<long long>(1, std::llround(raw[c] * scale));
    }

    void sample_prototypes() {
        std::mt19937_64 rng(derive_seed(spec_.seed, 0xA1));
        const double max_dot = std::cos(spec_.inter_class_separation);
        prototypes_.clear();
        prototypes_.reserve(spec_.num_classes);
        for (std::size_t c = 0; c < spec_.num_classes; ++c) {
            bool placed = false;
            for (int attempt = 0; attempt < 10000 && !placed; ++attempt) {
                Eigen::VectorXd p = detail::gaussian_vector(spec_.feature_dim, rng);
                p /= p.norm();
                placed = true;
                for (const auto& q : prototypes_)
                    if (p.dot(q) > max_dot) {
                        placed = false;
                        break;
                    }
                if (placed) prototypes_.push_back(std::move(p));
            }
            if (!placed)
                throw std::runtime_error("world: cannot place prototypes at the requested "
                                         "separation; lower inter_class_separation or num_classes");
        }
    }

    void sample_projection() {
        std::mt19937_64 rng(derive_seed(spec_.seed, 0xA4));
        const Eigen::Index d = static_cast<Eigen::Index>(spec_.feature_dim);
        projection_.resize(d, d + 5);
        std::normal_distribution<double> g(0.0, 1.0);
        const double scale = 1.0 / std::sqrt(static_cast<double>(d + 5));
        for (Eigen::Index r = 0; r < projection_.rows(); ++r)
            for (Eigen::Index c = 0; c < projection_.cols(); ++c) projection_(r, c) = g(rng) * scale;
    }

    Instance make_instance(std::size_t id, std::size_t cls, Split split, std::mt19937_64& rng) {
        Instance inst;
        inst.id = id;
        inst.class_label = cls;
        inst.split = split;
        const double spread = spec_.cluster_spread / std::sqrt(static_cast<double>(spec_.feature_dim));
        inst.latent = prototypes_[cls] + spread * detail::gaussian_vector(spec_.feature_dim, rng);
        std::uniform_real_distribution<double> center(10.0, 90.0);
        std::uniform_real_distribution<double> log_size(std::log(5.0), std::log(30.0));
        const double cx = center(rng);
        const double cy = center(rng);
        const double w = std::exp(log_size(rng));
        const double h = std::exp(log_size(rng));
        inst.gt_box = Box{cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h};
        return inst;
    }

    void sample_instances() {
        std::mt19937_64 rng_train(derive_seed(spec_.seed, 0xA2));
        std::mt19937_64 rng_val(derive_seed(spec_.seed, 0xA3));
        train_.clear();
        val_.clear();
        std::size_t id = 0;
        for (std::size_t c = 0; c < spec_.num_classes; ++c)
            for (long long i = 0; i < counts_[c]; ++i)
                train_.push_back(make_instance(id++, c, Split::Train, rng_train));
        for (std::size_t c = 0; c < spec_.num_classes; ++c)
            for (std::size_t i = 0; i < spec_.val_per_class; ++i)
                val_.push_back(make_instance(id++, c, Split::Val, rng_val));
    }

    // LVIS's 10/100 image cutoffs, scaled to the configured instance budget
    // and floored so all three groups stay populated at desk scale.
    void assign_groups() {
        const double scale = static_cast<double>(spec_.total_instances) / 1.3e6;
        rare_threshold_ = std::max(2.0, 10.0 * scale);
        common_threshold_ = std::max(10.0, 100.0 * scale);
        groups_.resize(spec_.num_classes);
        for (std::size_t c = 0; c < spec_.num_classes; ++c) {
            const double n = static_cast<double>(counts_[c]);
            groups_[c] = n <= rare_threshold_    ? ClassGroup::Rare
                         : n <= common_threshold_ ? ClassGroup::Common
                                                  : ClassGroup::Frequent;
        }
    }

    void read_instances_csv(std::istream& csv) {
        std::string line;
        if (!std::getline(csv, line)) throw std::runtime_error("dataset csv: empty file");
        train_.clear();
        val_.clear();
        std::vector<long long> seen_counts(spec_.num_classes, 0);
        std::size_t lineno = 1;
        while (std::getline(csv, line)) {
            ++lineno;
            if (line.empty()) continue;
            std::stringstream ss(line);
            std::string field;
            auto next = [&]() {
                if (!std::getline(ss, field, ','))
                    throw std::runtime_error("dataset csv: truncated row at line " +
                                             std::to_string(lineno));
                return field;
            };
            Instance inst;
            inst.id = std::stoull(next());
            const std::string split = next();
            if (split != "train" && split != "val")
                throw std::runtime_error("dataset csv: bad split at line " + std::to_string(lineno));
            inst.split = split == "train" ? Split::Train : Split::Val;
            inst.class_label = std::stoull(next());
            if (inst.class_label >= spec_.num_classes)
                throw std::runtime_error("dataset csv: class out of range at line " +
                                         std::to_string(lineno));
            inst.gt_box.x1 = std::stod(next());
            inst.gt_box.y1 = std::stod(next());
            inst.gt_box.x2 = std::stod(next());
            inst.gt_box.y2 = std::stod(next());
            require_valid(inst.gt_box, "dataset csv row");
            inst.latent.resize(static_cast<Eigen::Index>(spec_.feature_dim));
            for (Eigen::Index i = 0; i < inst.latent.size(); ++i) inst.latent[i] = std::stod(next());
            if (inst.split == Split::Train) {
                ++seen_counts[inst.class_label];
                train_.push_back(std::move(inst));
            } else {
                val_.push_back(std::move(inst));
            }
        }
        counts_ = seen_counts;
    }

    WorldSpec spec_;
    std::vector<Instance> train_;
    std::vector<Instance> val_;
    std::vector<long long> counts_;
    std::vector<ClassGroup> groups_;
    std::vector<Eigen::VectorXd> prototypes_;
    Eigen::MatrixXd projection_;
    double rare_threshold_ = 0.0;
    double common_threshold_ = 0.0;
};

}  // namespace loce
