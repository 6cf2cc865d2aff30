#pragma once
// Equilibrium analysis report: per-class score/accuracy rows, rare / common /
// frequent group accuracies, and the summary scalars (balanced accuracy,
// score dispersion, Spearman rank correlation between per-class mean score
// and per-class accuracy). Serializes to a stable JSON schema used by the
// CLI and the comparison tooling.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "loce/synthetic_world.hpp"

namespace loce {

// Spearman rank correlation with average ranks for ties. Returns 0 when
// either input is constant (correlation undefined).
inline double spearman_rank_correlation(const std::vector<double>& a,
                                        const std::vector<double>& b) {
    if (a.size() != b.size() || a.size() < 2)
        throw std::invalid_argument("spearman: need two equal-length vectors");
    auto ranks = [](const std::vector<double>& v) {
        const std::size_t n = v.size();
        std::vector<std::size_t> order(n);
        std::iota(order.begin(), order.end(), 0);
        std::sort(order.begin(), order.end(),
                  [&](std::size_t i, std::size_t j) { return v[i] < v[j]; });
        std::vector<double> r(n);
        std::size_t i = 0;
        while (i < n) {
            std::size_t j = i;
            while (j + 1 < n && v[order[j + 1]] == v[order[i]]) ++j;
            const double avg = 0.5 * (static_cast<double>(i) + static_cast<double>(j)) + 1.0;
            for (std::size_t k = i; k <= j; ++k) r[order[k]] = avg;
            i = j + 1;
        }
        return r;
    };
    const std::vector<double> ra = ranks(a);
    const std::vector<double> rb = ranks(b);
    const double n = static_cast<double>(a.size());
    const double ma = std::accumulate(ra.begin(), ra.end(), 0.0) / n;
    const double mb = std::accumulate(rb.begin(), rb.end(), 0.0) / n;
    double cov = 0.0, va = 0.0, vb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        cov += (ra[i] - ma) * (rb[i] - mb);
        va += (ra[i] - ma) * (ra[i] - ma);
        vb += (rb[i] - mb) * (rb[i] - mb);
    }
    if (va == 0.0 || vb == 0.0) return 0.0;
    return cov / std::sqrt(va * vb);
}

struct PerClassMetrics {
    std::size_t cls = 0;
    long long train_count = 0;
    ClassGroup group = ClassGroup::Frequent;
    double mean_score = 0.0;  // mean predicted true-class probability on val
    double accuracy = 0.0;
};

struct GroupMetrics {
    std::size_t num_classes = 0;
    double accuracy = 0.0;    // mean of per-class accuracies in the group
    double mean_score = 0.0;  // mean of per-class mean scores in the group
};

struct Provenance {
    std::string config_digest;
    std::uint64_t world_seed = 0;
    std::uint64_t train_seed = 0;
    std::string variant;  // e.g. "ce", "ebl", "mfs", "loce"
};

struct MetricsReport {
    std::vector<PerClassMetrics> per_class;
    GroupMetrics rare, common, frequent;
    double overall_accuracy = 0.0;
    double balanced_accuracy = 0.0;
    double score_dispersion = 0.0;  // population std of per-class mean scores
    double spearman_score_accuracy = 0.0;
    Provenance provenance;

    const GroupMetrics& group(ClassGroup g) const {
        switch (g) {
            case ClassGroup::Rare: return rare;
            case ClassGroup::Common: return common;
            default: return frequent;
        }
    }

    nlohmann::json to_json() const {
        nlohmann::json j;
        j["schema"] = "loce.report.v1";
        j["provenance"] = {{"config_digest", provenance.config_digest},
                           {"world_seed", provenance.world_seed},
                           {"train_seed", provenance.train_seed},
                           {"variant", provenance.variant}};
        j["scalars"] = {{"overall_accuracy", overall_accuracy},
                        {"balanced_accuracy", balanced_accuracy},
                        {"score_dispersion", score_dispersion},
                        {"spearman_score_accuracy", spearman_score_accuracy}};
        auto group_json = [](const GroupMetrics& g) {
            return nlohmann::json{{"num_classes", g.num_classes},
                                  {"accuracy", g.accuracy},
                                  {"mean_score", g.mean_score}};
        };
        j["per_group"] = {{"rare", group_json(rare)},
                          {"common", group_json(common)},
                          {"frequent", group_json(frequent)}};
        j["per_class"] = nlohmann::json::array();
        for (const auto& pc : per_class)
            j["per_class"].push_back({{"class", pc.cls},
                                      {"train_count", pc.train_count},
                                      {"group", group_name(pc.group)},
                                      {"mean_score", pc.mean_score},
                                      {"accuracy", pc.accuracy}});
        return j;
    }

    static MetricsReport from_json(const nlohmann::json& j) {
        if (j.value("schema", "") != "loce.report.v1")
            throw std::runtime_error("report: unknown or missing schema tag");
        MetricsReport r;
        const auto& prov = j.at("provenance");
        r.provenance.config_digest = prov.at("config_digest").get<std::string>();
        r.provenance.world_seed = prov.at("world_seed").get<std::uint64_t>();
        r.provenance.train_seed = prov.at("train_seed").get<std::uint64_t>();
        r.provenance.variant = prov.at("variant").get<std::string>();
        const auto& s = j.at("scalars");
        r.overall_accuracy = s.at("overall_accuracy").get<double>();
        r.balanced_accuracy = s.at("balanced_accuracy").get<double>();
        r.score_dispersion = s.at("score_dispersion").get<double>();
        r.spearman_score_accuracy = s.at("spearman_score_accuracy").get<double>();
        auto read_group = [&](const char* name, GroupMetrics& g) {
            const auto& gj = j.at("per_group").at(name);
            g.num_classes = gj.at("num_classes").get<std::size_t>();
            g.accuracy = gj.at("accuracy").get<double>();
            g.mean_score = gj.at("mean_score").get<double>();
        };
        read_group("rare", r.rare);
        read_group("common", r.common);
        read_group("frequent", r.frequent);
        for (const auto& row : j.at("per_class")) {
            PerClassMetrics pc;
            pc.cls = row.at("class").get<std::size_t>();
            pc.train_count = row.at("train_count").get<long long>();
            const std::string g = row.at("group").get<std::string>();
            pc.group = g == "rare"     ? ClassGroup::Rare
                       : g == "common" ? ClassGroup::Common
                                       : ClassGroup::Frequent;
            if (g != "rare" && g != "common" && g != "frequent")
                throw std::runtime_error("report: bad group label '" + g + "'");
            pc.mean_score = row.at("mean_score").get<double>();
            pc.accuracy = row.at("accuracy").get<double>();
            r.per_class.push_back(pc);
        }
        if (r.per_class.empty()) throw std::runtime_error("report: no per-class rows");
        return r;
    }
};

}  // namespace loce
