#pragma once
// Two-stage decoupled training. Stage 1 optimizes the whole model with plain
// softmax cross-entropy on proportionally sampled (head-dominated) batches.
// Stage 2 freezes the backbone and fine-tunes the classification and box
// heads; per iteration it builds a jittered-proposal batch with background
// mixed at neg_pos_ratio, enqueues positive features into the class-queue
// memory, draws k x m stored features via the inverse-score sampler, applies
// the equilibrium loss (or CE) plus a smooth-L1 box loss, steps the heads,
// and EMA-updates the score tracker from the positive-instance probabilities.
//
// The whole pipeline is a deterministic function of (WorldSpec, TrainConfig):
// every random choice flows through named substreams of the config seed, and
// the memory/sampler stream is separate from the batch stream so the ablation
// switches do not perturb baseline batches.

#include <Eigen/Core>
#include <cmath>
#include <cstdint>
#include <optional>
#include <ostream>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "loce/feature_memory.hpp"
#include "loce/hashing.hpp"
#include "loce/losses.hpp"
#include "loce/metrics.hpp"
#include "loce/model.hpp"
#include "loce/score_tracker.hpp"
#include "loce/synthetic_world.hpp"

namespace loce {

enum class IndicatorMode { Score, DatasetPrior };
enum class BatchReduction { Mean, Sum };

struct TrainConfig {
    std::size_t stage1_epochs = 12;
    std::size_t stage2_epochs = 6;
    std::size_t batch_size = 256;  // total instances per iteration incl. background
    double learning_rate = 0.2;
    double lr_decay_factor = 0.1;
    std::vector<std::size_t> stage1_decay_epochs;  // empty -> {E/2, 5E/6}
    std::vector<std::size_t> stage2_decay_epochs;
    double momentum = 0.9;
    double neg_pos_ratio = 3.0;  // background : positive
    SamplerConfig sampler{};
    std::size_t memory_capacity = 80;
    double alpha = 0.9;
    double background_substitute = 0.01;
    double tracker_init = 0.0;  // <= 0 -> 1/(C+1)
    std::uint64_t seed = 1;
    bool ebl_enabled = true;
    bool mfs_enabled = true;
    IndicatorMode indicator = IndicatorMode::Score;
    BatchReduction reduction = BatchReduction::Mean;
    bool warm_start_tracker = false;    // carry the stage-1 tracker into stage 2
    bool memory_updates_tracker = true; // sampled features count as positives for the EMA
    bool reinit_heads_stage2 = false;
    double proposal_min_iou = 0.0;  // > 0 enables rejection sampling of jittered boxes
    double box_loss_weight = 1.0;
    std::size_t hidden_dim = 64;
    std::size_t embed_dim = 32;

    void validate() const {
        if (batch_size == 0) throw std::invalid_argument("train: batch_size must be >= 1");
        if (!(learning_rate > 0.0)) throw std::invalid_argument("train: learning_rate <= 0");
        if (!(lr_decay_factor > 0.0 && lr_decay_factor < 1.0))
            throw std::invalid_argument("train: decay factor must be in (0,1)");
        if (!(momentum >= 0.0 && momentum < 1.0))
            throw std::invalid_argument("train: momentum must be in [0,1)");
        if (!(neg_pos_ratio >= 0.0)) throw std::invalid_argument("train: neg_pos_ratio < 0");
        if (!sampler.valid()) throw std::invalid_argument("train: sampler k,m must be >= 1");
        if (memory_capacity == 0) throw std::invalid_argument("train: memory_capacity must be >= 1");
        if (!(alpha >= 0.0 && alpha < 1.0)) throw std::invalid_argument("train: alpha not in [0,1)");
        if (!(background_substitute > 0.0 && background_substitute <= 1.0))
            throw std::invalid_argument("train: background_substitute not in (0,1]");
        if (!(box_loss_weight >= 0.0)) throw std::invalid_argument("train: box_loss_weight < 0");
        if (hidden_dim == 0 || embed_dim == 0)
            throw std::invalid_argument("train: model dimensions must be >= 1");
        if (!(proposal_min_iou >= 0.0 && proposal_min_iou < 1.0))
            throw std::invalid_argument("train: proposal_min_iou must be in [0,1)");
    }

    std::size_t positives_per_batch() const {
        const auto npos = static_cast<std::size_t>(
            std::llround(static_cast<double>(batch_size) / (1.0 + neg_pos_ratio)));
        return std::max<std::size_t>(1, std::min(npos, batch_size));
    }
    double tracker_init_value(std::size_t num_classes_incl_bg) const {
        return tracker_init > 0.0 ? tracker_init
                                  : 1.0 / static_cast<double>(num_classes_incl_bg);
    }
};

struct EpochStats {
    int stage = 1;
    std::size_t epoch = 0;
    double lr = 0.0;
    double train_loss = 0.0;
    double cls_loss = 0.0;
    double box_loss = 0.0;
    double overall_acc = 0.0;
    double balanced_acc = 0.0;
    double rare_acc = 0.0;
    double common_acc = 0.0;
    double frequent_acc = 0.0;
    double score_dispersion = 0.0;
    double rare_score = 0.0;
    double common_score = 0.0;
    double frequent_score = 0.0;
};

using History = std::vector<EpochStats>;

inline void write_history_csv(std::ostream& os, const History& history) {
    os << "stage,epoch,lr,train_loss,cls_loss,box_loss,overall_acc,balanced_acc,"
          "rare_acc,common_acc,frequent_acc,score_dispersion,rare_score,common_score,"
          "frequent_score\n";
    char buf[32];
    auto put = [&](double v) {
        std::snprintf(buf, sizeof(buf), "%.17g", v);
        os << ',' << buf;
    };
    for (const auto& e : history) {
        os << e.stage << ',' << e.epoch;
        put(e.lr);
        put(e.train_loss);
        put(e.cls_loss);
        put(e.box_loss);
        put(e.overall_acc);
        put(e.balanced_acc);
        put(e.rare_acc);
        put(e.common_acc);
        put(e.frequent_acc);
        put(e.score_dispersion);
        put(e.rare_score);
        put(e.common_score);
        put(e.frequent_score);
        os << '\n';
    }
}

namespace detail {

inline std::vector<std::size_t> default_decay_epochs(std::size_t epochs) {
    std::vector<std::size_t> out;
    const auto half = epochs / 2;
    const auto late = (epochs * 5) / 6;
    if (half > 0) out.push_back(half);
    if (late > half) out.push_back(late);
    return out;
}

inline double lr_at_epoch(double initial, double factor, const std::vector<std::size_t>& milestones,
                          std::size_t epoch) {
    double lr = initial;
    for (std::size_t m : milestones)
        if (epoch >= m) lr *= factor;
    return lr;
}

inline double smooth_l1(double r) { return std::abs(r) < 1.0 ? 0.5 * r * r : std::abs(r) - 0.5; }
inline double smooth_l1_grad(double r) { return std::clamp(r, -1.0, 1.0); }

// Momentum buffers for one tensor set; v <- mu v + g, p <- p - lr v.
struct SgdState {
    std::vector<Eigen::MatrixXd> velocity;

    void step(std::vector<Eigen::MatrixXd*> params, const std::vector<Eigen::MatrixXd>& grads,
              double lr, double mu) {
        if (velocity.empty())
            for (const auto& g : grads) velocity.emplace_back(Eigen::MatrixXd::Zero(g.rows(), g.cols()));
        for (std::size_t i = 0; i < params.size(); ++i) {
            velocity[i] = mu * velocity[i] + grads[i];
            *params[i] -= lr * velocity[i];
        }
    }
};

struct FreshBatch {
    Eigen::MatrixXd x;  // feature_dim x n, positives first
    std::vector<std::size_t> labels;
    std::vector<RegressionTarget> targets;      // one per positive
    std::vector<std::size_t> instance_indices;  // train indices of positives
    std::size_t num_positives = 0;
};

inline FreshBatch assemble_batch(const World& world, const TrainConfig& cfg,
                                 std::mt19937_64& rng) {
    const std::size_t npos = cfg.positives_per_batch();
    const std::size_t nneg = cfg.batch_size - npos;
    FreshBatch batch;
    batch.num_positives = npos;
    batch.x.resize(static_cast<Eigen::Index>(world.spec().feature_dim),
                   static_cast<Eigen::Index>(npos + nneg));
    batch.labels.reserve(npos + nneg);
    std::uniform_int_distribution<std::size_t> pick(0, world.train().size() - 1);
    for (std::size_t i = 0; i < npos; ++i) {
        const std::size_t idx = pick(rng);
        const Instance& inst = world.train()[idx];
        const Box proposal = sample_proposal(inst.gt_box, rng, cfg.proposal_min_iou);
        batch.x.col(static_cast<Eigen::Index>(i)) = world.extract_feature(inst, proposal);
        batch.labels.push_back(inst.class_label);
        batch.targets.push_back(encode_target(proposal, inst.gt_box));
        batch.instance_indices.push_back(idx);
    }
    for (std::size_t i = 0; i < nneg; ++i) {
        auto bg = world.background_sample(rng);
        batch.x.col(static_cast<Eigen::Index>(npos + i)) = bg.feature;
        batch.labels.push_back(bg.label);
    }
    return batch;
}

inline Eigen::MatrixXd val_features(const World& world) {
    Eigen::MatrixXd x(static_cast<Eigen::Index>(world.spec().feature_dim),
                      static_cast<Eigen::Index>(world.val().size()));
    for (std::size_t i = 0; i < world.val().size(); ++i)
        x.col(static_cast<Eigen::Index>(i)) =
            world.extract_feature(world.val()[i], world.val()[i].gt_box);
    return x;
}

inline MetricsReport evaluate_with_features(const World& world, const Model& model,
                                            const Eigen::MatrixXd& x_val) {
    const std::size_t C = world.spec().num_classes;
    const Eigen::MatrixXd z = model.logits(model.backbone(x_val));
    std::vector<double> correct(C, 0.0), prob_sum(C, 0.0), seen(C, 0.0);
    for (std::size_t i = 0; i < world.val().size(); ++i) {
        const std::size_t y = world.val()[i].class_label;
        const Eigen::VectorXd p = softmax(z.col(static_cast<Eigen::Index>(i)));
        Eigen::Index argmax = 0;
        p.maxCoeff(&argmax);
        seen[y] += 1.0;
        prob_sum[y] += p[static_cast<Eigen::Index>(y)];
        if (static_cast<std::size_t>(argmax) == y) correct[y] += 1.0;
    }

    MetricsReport report;
    std::vector<double> scores(C), accs(C);
    double total_correct = 0.0;
    for (std::size_t c = 0; c < C; ++c) {
        if (seen[c] == 0.0) throw std::runtime_error("evaluate: class missing from val split");
        scores[c] = prob_sum[c] / seen[c];
        accs[c] = correct[c] / seen[c];
        total_correct += correct[c];
        report.per_class.push_back(
            {c, world.train_counts()[c], world.group(c), scores[c], accs[c]});
    }
    auto fill_group = [&](ClassGroup g, GroupMetrics& out) {
        double acc = 0.0, score = 0.0;
        std::size_t n = 0;
        for (std::size_t c = 0; c < C; ++c)
            if (world.group(c) == g) {
                acc += accs[c];
                score += scores[c];
                ++n;
            }
        out.num_classes = n;
        out.accuracy = n ? acc / static_cast<double>(n) : 0.0;
        out.mean_score = n ? score / static_cast<double>(n) : 0.0;
    };
    fill_group(ClassGroup::Rare, report.rare);
    fill_group(ClassGroup::Common, report.common);
    fill_group(ClassGroup::Frequent, report.frequent);

    report.overall_accuracy = total_correct / static_cast<double>(world.val().size());
    double mean_acc = 0.0, mean_score = 0.0;
    for (std::size_t c = 0; c < C; ++c) {
        mean_acc += accs[c];
        mean_score += scores[c];
    }
    mean_acc /= static_cast<double>(C);
    mean_score /= static_cast<double>(C);
    report.balanced_accuracy = mean_acc;
    double var = 0.0;
    for (std::size_t c = 0; c < C; ++c) var += (scores[c] - mean_score) * (scores[c] - mean_score);
    report.score_dispersion = std::sqrt(var / static_cast<double>(C));
    report.spearman_score_accuracy = spearman_rank_correlation(scores, accs);
    return report;
}

inline EpochStats stats_from_report(const MetricsReport& r, int stage, std::size_t epoch, double lr,
                                    double total_loss, double cls_loss, double box_loss) {
    EpochStats e;
    e.stage = stage;
    e.epoch = epoch;
    e.lr = lr;
    e.train_loss = total_loss;
    e.cls_loss = cls_loss;
    e.box_loss = box_loss;
    e.overall_acc = r.overall_accuracy;
    e.balanced_acc = r.balanced_accuracy;
    e.rare_acc = r.rare.accuracy;
    e.common_acc = r.common.accuracy;
    e.frequent_acc = r.frequent.accuracy;
    e.score_dispersion = r.score_dispersion;
    e.rare_score = r.rare.mean_score;
    e.common_score = r.common.mean_score;
    e.frequent_score = r.frequent.mean_score;
    return e;
}

}  // namespace detail

// Per-class accuracy and score statistics on the balanced val split.
inline MetricsReport evaluate(const World& world, const Model& model) {
    return detail::evaluate_with_features(world, model, detail::val_features(world));
}

inline Model init_model(const World& world, const TrainConfig& cfg) {
    cfg.validate();
    std::mt19937_64 rng(derive_seed(cfg.seed, 0xB0));
    return Model::init(world.spec().feature_dim, cfg.hidden_dim, cfg.embed_dim,
                       world.spec().num_classes + 1, rng);
}

inline MeanScoreTracker make_tracker(const World& world, const TrainConfig& cfg) {
    return MeanScoreTracker(world.spec().num_classes, cfg.alpha, cfg.background_substitute,
                            cfg.tracker_init_value(world.spec().num_classes + 1));
}

inline FeatureMemory make_memory(const World& world, const TrainConfig& cfg) {
    (void)world;
    return FeatureMemory(world.spec().num_classes, cfg.memory_capacity, cfg.embed_dim);
}

struct StageResult {
    Model model;
    History history;
    MeanScoreTracker tracker;
};

// Stage 1: representation learning with plain CE and proportional sampling.
// The score tracker is maintained for monitoring and optional warm starts but
// does not influence the loss.
inline StageResult run_stage1(const World& world, Model model, const TrainConfig& cfg) {
    cfg.validate();
    if (model.feature_dim() != world.spec().feature_dim ||
        model.num_outputs() != world.spec().num_classes + 1)
        throw std::invalid_argument("stage1: model does not match world dimensions");

    MeanScoreTracker tracker = make_tracker(world, cfg);
    History history;
    if (cfg.stage1_epochs == 0) return {std::move(model), std::move(history), std::move(tracker)};

    std::mt19937_64 rng_batch(derive_seed(cfg.seed, 0xB1));
    const auto milestones = cfg.stage1_decay_epochs.empty()
                                ? detail::default_decay_epochs(cfg.stage1_epochs)
                                : cfg.stage1_decay_epochs;
    const std::size_t iters =
        (world.train().size() + cfg.positives_per_batch() - 1) / cfg.positives_per_batch();
    const Eigen::MatrixXd x_val = detail::val_features(world);

    detail::SgdState sgd;
    for (std::size_t epoch = 0; epoch < cfg.stage1_epochs; ++epoch) {
        const double lr = detail::lr_at_epoch(cfg.learning_rate, cfg.lr_decay_factor, milestones, epoch);
        double epoch_loss = 0.0;
        for (std::size_t it = 0; it < iters; ++it) {
            const auto batch = detail::assemble_batch(world, cfg, rng_batch);
            const Eigen::Index n = batch.x.cols();
            const Model::Trace trace = model.backbone_trace(batch.x);
            const Eigen::MatrixXd z = model.logits(trace.embed);

            const double w =
                cfg.reduction == BatchReduction::Mean ? 1.0 / static_cast<double>(n) : 1.0;
            Eigen::MatrixXd gz(z.rows(), n);
            double cls_loss = 0.0;
            std::vector<double> pos_probs(batch.num_positives);
            for (Eigen::Index i = 0; i < n; ++i) {
                const auto y = static_cast<Eigen::Index>(batch.labels[static_cast<std::size_t>(i)]);
                LossResult lr_i = softmax_ce(z.col(i), y);
                cls_loss += w * lr_i.loss;
                gz.col(i) = w * lr_i.gradient;
                if (static_cast<std::size_t>(i) < batch.num_positives)
                    pos_probs[static_cast<std::size_t>(i)] = lr_i.gradient[y] + 1.0;
            }
            if (!std::isfinite(cls_loss))
                throw std::runtime_error("stage1 diverged: non-finite loss at epoch " +
                                         std::to_string(epoch) + " iter " + std::to_string(it));
            epoch_loss += cls_loss;

            // backprop through heads and backbone
            Eigen::MatrixXd g_embed = model.Wc.transpose() * gz;
            Eigen::MatrixXd g_h = model.W2.transpose() * g_embed;
            Eigen::MatrixXd g_a1 = g_h.array() * (1.0 - trace.h.array().square());
            std::vector<Eigen::MatrixXd> grads;
            grads.push_back(gz * trace.embed.transpose());             // Wc
            grads.push_back(gz.rowwise().sum());                       // bc
            grads.push_back(g_embed * trace.h.transpose());            // W2
            grads.push_back(g_embed.rowwise().sum());                  // b2
            grads.push_back(g_a1 * batch.x.transpose());               // W1
            grads.push_back(g_a1.rowwise().sum());                     // b1
            Eigen::MatrixXd bc_m = model.bc, b2_m = model.b2, b1_m = model.b1;
            sgd.step({&model.Wc, &bc_m, &model.W2, &b2_m, &model.W1, &b1_m}, grads, lr,
                     cfg.momentum);
            model.bc = bc_m;
            model.b2 = b2_m;
            model.b1 = b1_m;

            for (std::size_t i = 0; i < batch.num_positives; ++i)
                tracker.update(batch.labels[i], std::clamp(pos_probs[i], 0.0, 1.0));
        }
        const MetricsReport r = detail::evaluate_with_features(world, model, x_val);
        const double mean_loss = epoch_loss / static_cast<double>(iters);
        history.push_back(detail::stats_from_report(r, 1, epoch, lr, mean_loss, mean_loss, 0.0));
    }
    return {std::move(model), std::move(history), std::move(tracker)};
}

struct Stage2Result {
    Model model;
    History history;
    MeanScoreTracker tracker;
    FeatureMemory memory;
};

// Stage 2: classifier/box-head fine-tuning with the equilibrium loss and
// memory-augmented feature sampling (each independently switchable).
inline Stage2Result run_stage2(const World& world, Model model, MeanScoreTracker tracker,
                               FeatureMemory memory, const TrainConfig& cfg) {
    cfg.validate();
    if (model.feature_dim() != world.spec().feature_dim ||
        model.num_outputs() != world.spec().num_classes + 1)
        throw std::invalid_argument("stage2: model does not match world dimensions");
    if (tracker.num_foreground() != world.spec().num_classes)
        throw std::invalid_argument("stage2: tracker does not match world class count");
    if (memory.num_classes() != world.spec().num_classes ||
        memory.feature_dim() != model.embed_dim())
        throw std::invalid_argument("stage2: memory does not match model/world dimensions");

    const std::uint64_t backbone_before = model.backbone_checksum();
    History history;
    std::mt19937_64 rng_batch(derive_seed(cfg.seed, 0xB2));
    std::mt19937_64 rng_memory(derive_seed(cfg.seed, 0xB3));
    if (cfg.reinit_heads_stage2) {
        std::mt19937_64 rng_heads(derive_seed(cfg.seed, 0xB4));
        model.reinit_heads(rng_heads);
    }

    const std::optional<MeanScoreTracker> prior =
        cfg.indicator == IndicatorMode::DatasetPrior
            ? std::optional<MeanScoreTracker>(
                  frequency_indicator(world.train_counts(), cfg.background_substitute))
            : std::nullopt;

    const auto milestones = cfg.stage2_decay_epochs.empty()
                                ? detail::default_decay_epochs(cfg.stage2_epochs)
                                : cfg.stage2_decay_epochs;
    const std::size_t iters =
        (world.train().size() + cfg.positives_per_batch() - 1) / cfg.positives_per_batch();
    const Eigen::MatrixXd x_val = detail::val_features(world);

    detail::SgdState sgd;
    for (std::size_t epoch = 0; epoch < cfg.stage2_epochs; ++epoch) {
        const double lr = detail::lr_at_epoch(cfg.learning_rate, cfg.lr_decay_factor, milestones, epoch);
        double epoch_loss = 0.0, epoch_cls = 0.0, epoch_box = 0.0;
        for (std::size_t it = 0; it < iters; ++it) {
            const auto batch = detail::assemble_batch(world, cfg, rng_batch);
            const Eigen::Index n_fresh = batch.x.cols();
            const Eigen::MatrixXd embed_fresh = model.backbone(batch.x);

            if (cfg.mfs_enabled)
                for (std::size_t i = 0; i < batch.num_positives; ++i)
                    memory.enqueue(MemoryEntry{embed_fresh.col(static_cast<Eigen::Index>(i)),
                                               batch.targets[i], batch.labels[i]});

            const MeanScoreTracker& indicator = prior ? *prior : tracker;
            std::vector<MemoryEntry> drawn;
            if (cfg.mfs_enabled)
                drawn = sample_memory(memory, indicator, cfg.sampler, rng_memory);

            const Eigen::Index n_mem = static_cast<Eigen::Index>(drawn.size());
            const Eigen::Index n_all = n_fresh + n_mem;
            Eigen::MatrixXd embed_all(model.embed_dim(), n_all);
            embed_all.leftCols(n_fresh) = embed_fresh;
            for (Eigen::Index i = 0; i < n_mem; ++i)
                embed_all.col(n_fresh + i) = drawn[static_cast<std::size_t>(i)].feature;

            std::vector<std::size_t> labels_all = batch.labels;
            for (const auto& e : drawn) labels_all.push_back(e.source_class);

            const Eigen::MatrixXd z = model.logits(embed_all);
            const double w_cls =
                cfg.reduction == BatchReduction::Mean ? 1.0 / static_cast<double>(n_all) : 1.0;
            Eigen::MatrixXd gz(z.rows(), n_all);
            double cls_loss = 0.0;
            for (Eigen::Index i = 0; i < n_all; ++i) {
                const auto y = static_cast<Eigen::Index>(labels_all[static_cast<std::size_t>(i)]);
                LossResult li = cfg.ebl_enabled ? equilibrium_loss(z.col(i), y, indicator)
                                                : softmax_ce(z.col(i), y);
                cls_loss += w_cls * li.loss;
                gz.col(i) = w_cls * li.gradient;
            }

            // smooth-L1 over fresh positives and memory entries, equally weighted
            const Eigen::Index n_box = static_cast<Eigen::Index>(batch.num_positives) + n_mem;
            Eigen::MatrixXd g_box = Eigen::MatrixXd::Zero(4, n_all);
            double box_loss = 0.0;
            if (n_box > 0 && cfg.box_loss_weight > 0.0) {
                const Eigen::MatrixXd pred = model.box_pred(embed_all);
                const double w_box = cfg.box_loss_weight *
                                     (cfg.reduction == BatchReduction::Mean
                                          ? 1.0 / static_cast<double>(n_box)
                                          : 1.0);
                auto accumulate = [&](Eigen::Index col, const RegressionTarget& t) {
                    const double target[4] = {t.dx, t.dy, t.dw, t.dh};
                    for (int k = 0; k < 4; ++k) {
                        const double r = pred(k, col) - target[k];
                        box_loss += w_box * detail::smooth_l1(r);
                        g_box(k, col) = w_box * detail::smooth_l1_grad(r);
                    }
                };
                for (std::size_t i = 0; i < batch.num_positives; ++i)
                    accumulate(static_cast<Eigen::Index>(i), batch.targets[i]);
                for (Eigen::Index i = 0; i < n_mem; ++i)
                    accumulate(n_fresh + i, drawn[static_cast<std::size_t>(i)].target);
            }

            const double total = cls_loss + box_loss;
            if (!std::isfinite(total))
                throw std::runtime_error("stage2 diverged: non-finite loss at epoch " +
                                         std::to_string(epoch) + " iter " + std::to_string(it));
            epoch_loss += total;
            epoch_cls += cls_loss;
            epoch_box += box_loss;

            std::vector<Eigen::MatrixXd> grads;
            grads.push_back(gz * embed_all.transpose());     // Wc
            grads.push_back(gz.rowwise().sum());             // bc
            grads.push_back(g_box * embed_all.transpose());  // Wb
            grads.push_back(g_box.rowwise().sum());          // bb
            Eigen::MatrixXd bc_m = model.bc, bb_m = model.bb;
            sgd.step({&model.Wc, &bc_m, &model.Wb, &bb_m}, grads, lr, cfg.momentum);
            model.bc = bc_m;
            model.bb = bb_m;

            // EMA updates from this iteration's plain softmax probabilities:
            // fresh positives in batch order, then sampled memory features.
            for (std::size_t i = 0; i < batch.num_positives; ++i) {
                const Eigen::VectorXd p = softmax(z.col(static_cast<Eigen::Index>(i)));
                tracker.update(batch.labels[i],
                               p[static_cast<Eigen::Index>(batch.labels[i])]);
            }
            if (cfg.memory_updates_tracker)
                for (Eigen::Index i = 0; i < n_mem; ++i) {
                    const Eigen::VectorXd p = softmax(z.col(n_fresh + i));
                    const std::size_t y = drawn[static_cast<std::size_t>(i)].source_class;
                    tracker.update(y, p[static_cast<Eigen::Index>(y)]);
                }
        }
        const MetricsReport r = detail::evaluate_with_features(world, model, x_val);
        const double inv_iters = 1.0 / static_cast<double>(iters);
        history.push_back(detail::stats_from_report(r, 2, epoch, lr, epoch_loss * inv_iters,
                                                    epoch_cls * inv_iters, epoch_box * inv_iters));
    }

    if (model.backbone_checksum() != backbone_before)
        throw std::logic_error("stage2: backbone parameters changed while frozen");
    return {std::move(model), std::move(history), std::move(tracker), std::move(memory)};
}

struct PipelineResult {
    Model model;
    History history;  // stage-1 rows followed by stage-2 rows
    MetricsReport report;
    MeanScoreTracker tracker;
};

// Full decoupled pipeline: init, stage 1, stage 2, final evaluation.
inline PipelineResult run_pipeline(const World& world, const TrainConfig& cfg) {
    StageResult s1 = run_stage1(world, init_model(world, cfg), cfg);
    MeanScoreTracker tracker = cfg.warm_start_tracker ? s1.tracker : make_tracker(world, cfg);
    Stage2Result s2 = run_stage2(world, std::move(s1.model), std::move(tracker),
                                 make_memory(world, cfg), cfg);
    History history = std::move(s1.history);
    history.insert(history.end(), s2.history.begin(), s2.history.end());
    MetricsReport report = evaluate(world, s2.model);
    return {std::move(s2.model), std::move(history), std::move(report), std::move(s2.tracker)};
}

}  // namespace loce
