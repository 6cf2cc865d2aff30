#pragma once
// Softmax cross-entropy and the score-guided equilibrium loss, both with
// closed-form gradients w.r.t. the logits.
//
// The equilibrium loss adds a pairwise margin delta(y,y') = log s_{y'} - log s_y
// to every negative-class term, where s is the tracked mean classification
// score (background reads as its fixed substitute). It is algebraically the
// plain cross-entropy of the score-shifted logits z + log s, and its gradient
// is softmax(z + log s) - onehot(y); both facts are exercised as oracles in
// the test suite. The two losses share one evaluation path, so equal scores
// reduce the equilibrium loss to cross-entropy bit for bit.

#include <Eigen/Core>
#include <cmath>
#include <stdexcept>

#include "loce/score_tracker.hpp"

namespace loce {

struct LossResult {
    double loss = 0.0;
    Eigen::VectorXd gradient;  // d loss / d logits, sums to zero
};

inline void require_finite_logits(const Eigen::VectorXd& z) {
    if (z.size() < 2) throw std::invalid_argument("loss: need at least two classes");
    if (!z.allFinite()) throw std::invalid_argument("loss: non-finite logits");
}

// Numerically stable softmax of raw logits (used for evaluation and for the
// probabilities fed back into the score tracker).
inline Eigen::VectorXd softmax(const Eigen::VectorXd& z) {
    require_finite_logits(z);
    const double m = z.maxCoeff();
    Eigen::VectorXd p = (z.array() - m).exp();
    p /= p.sum();
    return p;
}

// Core evaluation shared by both losses: cross-entropy over the shifted
// differences u_i = (z_i - z_y) + delta_i with delta_y = 0 and u_y pinned to
// exactly zero. The running maximum is subtracted before exponentiation and
// the all-negative branch goes through log1p, so tiny losses keep full
// relative precision.
inline LossResult margin_softmax_ce(const Eigen::VectorXd& z, Eigen::Index y,
                                    const Eigen::VectorXd& delta) {
    require_finite_logits(z);
    if (y < 0 || y >= z.size()) throw std::invalid_argument("loss: class index out of range");
    if (delta.size() != z.size()) throw std::invalid_argument("loss: margin length mismatch");

    const Eigen::Index n = z.size();
    Eigen::VectorXd u(n);
    const double zy = z[y];
    for (Eigen::Index i = 0; i < n; ++i) u[i] = (z[i] - zy) + delta[i];
    u[y] = 0.0;

    const double m = u.maxCoeff();  // >= 0 because u_y = 0
    Eigen::VectorXd e = (u.array() - m).exp();
    double sum_others = 0.0;
    for (Eigen::Index i = 0; i < n; ++i)
        if (i != y) sum_others += e[i];

    LossResult out;
    out.loss = (m == 0.0) ? std::log1p(sum_others) : m + std::log(e[y] + sum_others);
    const double total = e[y] + sum_others;
    out.gradient = e / total;
    out.gradient[y] -= 1.0;
    return out;
}

// Eq.-1-style cross-entropy: loss = log[1 + sum_{y' != y} exp(z_{y'} - z_y)],
// gradient = softmax(z) - onehot(y).
inline LossResult softmax_ce(const Eigen::VectorXd& z, Eigen::Index y) {
    return margin_softmax_ce(z, y, Eigen::VectorXd::Zero(z.size()));
}

// Adaptive margin between a positive class y and a negative class y_prime.
// Computed as a difference of logs so that margin(y,y') == -margin(y',y)
// exactly and equal scores give exactly zero.
inline double margin(const MeanScoreTracker& s, std::size_t y, std::size_t y_prime) {
    return std::log(s.score(y_prime)) - std::log(s.score(y));
}

inline LossResult equilibrium_loss(const Eigen::VectorXd& z, Eigen::Index y,
                                   const MeanScoreTracker& s) {
    require_finite_logits(z);
    if (z.size() != static_cast<Eigen::Index>(s.num_classes()))
        throw std::invalid_argument("equilibrium_loss: logits length must be C+1");
    if (y < 0 || y >= z.size())
        throw std::invalid_argument("equilibrium_loss: class index out of range");

    Eigen::VectorXd delta(z.size());
    const double log_sy = std::log(s.score(static_cast<std::size_t>(y)));
    for (Eigen::Index i = 0; i < z.size(); ++i)
        delta[i] = std::log(s.score(static_cast<std::size_t>(i))) - log_sy;
    delta[y] = 0.0;
    return margin_softmax_ce(z, y, delta);
}

}  // namespace loce
