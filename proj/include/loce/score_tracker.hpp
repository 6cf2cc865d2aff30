#pragma once
// Per-class mean classification score, maintained as an exponential moving
// average over the softmax probabilities of positive training instances.
// The tracked vector is the learning-status indicator consumed by the
// equilibrium-loss margins and by the memory sampler. The background class
// is never tracked: reads at the background index always return a fixed
// small substitute value.

#include <cmath>
#include <cstddef>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace loce {

class MeanScoreTracker {
public:
    // Foreground entries start at init_value; index C (background) reads as
    // background_substitute forever.
    MeanScoreTracker(std::size_t num_foreground, double alpha, double background_substitute,
                     double init_value)
        : scores_(num_foreground, init_value),
          alpha_(alpha),
          background_substitute_(background_substitute) {
        if (num_foreground == 0) throw std::invalid_argument("tracker: need at least one class");
        if (!(alpha >= 0.0 && alpha < 1.0))
            throw std::invalid_argument("tracker: alpha must be in [0,1)");
        if (!(background_substitute > 0.0 && background_substitute <= 1.0))
            throw std::invalid_argument("tracker: background substitute must be in (0,1]");
        if (!(init_value > 0.0 && init_value <= 1.0))
            throw std::invalid_argument("tracker: init value must be in (0,1]");
    }

    std::size_t num_foreground() const { return scores_.size(); }
    std::size_t background_index() const { return scores_.size(); }
    std::size_t num_classes() const { return scores_.size() + 1; }
    double alpha() const { return alpha_; }
    double background_substitute() const { return background_substitute_; }

    // Score read for margin/sampling purposes; background resolves to the
    // substitute, never to a tracked value.
    double score(std::size_t cls) const {
        if (cls > scores_.size()) throw std::out_of_range("tracker: class index out of range");
        return cls == scores_.size() ? background_substitute_ : scores_[cls];
    }

    const std::vector<double>& foreground_scores() const { return scores_; }

    // s_y <- alpha * s_y + (1 - alpha) * p for one positive instance of
    // foreground class y. The result is floored at the smallest normal
    // double so entries stay strictly positive even for p = 0, alpha = 0.
    void update(std::size_t cls, double predicted_probability) {
        if (cls >= scores_.size())
            throw std::invalid_argument("tracker: background or out-of-range class not updatable");
        if (!(predicted_probability >= 0.0 && predicted_probability <= 1.0))
            throw std::invalid_argument("tracker: probability outside [0,1]");
        const double next = alpha_ * scores_[cls] + (1.0 - alpha_) * predicted_probability;
        scores_[cls] = std::max(next, std::numeric_limits<double>::min());
    }

    // Overwrites the tracked entries wholesale (used by the dataset-prior
    // indicator and by snapshot loading). Values must lie in (0,1].
    void set_scores(const std::vector<double>& values) {
        if (values.size() != scores_.size())
            throw std::invalid_argument("tracker: score vector length mismatch");
        for (double v : values)
            if (!(v > 0.0 && v <= 1.0))
                throw std::invalid_argument("tracker: scores must be in (0,1]");
        scores_ = values;
    }

    void save(std::ostream& os) const {
        os << "format loce.score_tracker.v1\n";
        os << "alpha " << format_double(alpha_) << "\n";
        os << "background_substitute " << format_double(background_substitute_) << "\n";
        os << "num_foreground " << scores_.size() << "\n";
        for (std::size_t c = 0; c < scores_.size(); ++c)
            os << "score " << c << " " << format_double(scores_[c]) << "\n";
    }

    static MeanScoreTracker load(std::istream& is) {
        std::string key;
        std::string format;
        if (!(is >> key >> format) || key != "format" || format != "loce.score_tracker.v1")
            throw std::runtime_error("tracker snapshot: bad or missing format line");
        double alpha = -1.0;
        double substitute = -1.0;
        std::size_t n = 0;
        if (!(is >> key >> alpha) || key != "alpha")
            throw std::runtime_error("tracker snapshot: expected alpha");
        if (!(is >> key >> substitute) || key != "background_substitute")
            throw std::runtime_error("tracker snapshot: expected background_substitute");
        if (!(is >> key >> n) || key != "num_foreground" || n == 0)
            throw std::runtime_error("tracker snapshot: expected num_foreground");
        MeanScoreTracker tracker(n, alpha, substitute, 1.0);
        std::vector<double> scores(n, 0.0);
        std::vector<bool> seen(n, false);
        for (std::size_t i = 0; i < n; ++i) {
            std::size_t c = 0;
            double v = 0.0;
            if (!(is >> key >> c >> v) || key != "score" || c >= n)
                throw std::runtime_error("tracker snapshot: bad score line");
            scores[c] = v;
            seen[c] = true;
        }
        for (bool s : seen)
            if (!s) throw std::runtime_error("tracker snapshot: missing class entry");
        tracker.set_scores(scores);
        return tracker;
    }

    static std::string format_double(double v) {
        char buf[32];
        std::snprintf(buf, sizeof(buf), "%.17g", v);
        return buf;
    }

private:
    std::vector<double> scores_;
    double alpha_;
    double background_substitute_;
};

// Static dataset-prior indicator: instance counts normalized to sum to 1,
// exposed through the same interface the EMA tracker offers so margins and
// the sampler can consume either. Zero counts are rejected; they would put
// a log(0) into the margin.
inline MeanScoreTracker frequency_indicator(const std::vector<long long>& class_instance_counts,
                                            double background_substitute = 0.01) {
    if (class_instance_counts.empty())
        throw std::invalid_argument("frequency_indicator: empty counts");
    long long total = 0;
    for (long long c : class_instance_counts) {
        if (c < 1) throw std::invalid_argument("frequency_indicator: every class needs count >= 1");
        total += c;
    }
    MeanScoreTracker indicator(class_instance_counts.size(), 0.0, background_substitute, 1.0);
    std::vector<double> scores(class_instance_counts.size());
    for (std::size_t i = 0; i < scores.size(); ++i)
        scores[i] = static_cast<double>(class_instance_counts[i]) / static_cast<double>(total);
    indicator.set_scores(scores);
    return indicator;
}

}  // namespace loce
