#pragma once
// Axis-aligned boxes, IoU, the dense jittered-box generator and the
// center/log-size regression-target encoding. Everything here is pure;
// randomness enters only through an explicitly passed JitterSample or rng.

#include <array>
#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>

namespace loce {

struct Box {
    double x1 = 0.0;
    double y1 = 0.0;
    double x2 = 0.0;
    double y2 = 0.0;

    double width() const { return x2 - x1; }
    double height() const { return y2 - y1; }
    double area() const { return width() * height(); }
    double center_x() const { return 0.5 * (x1 + x2); }
    double center_y() const { return 0.5 * (y1 + y2); }

    bool valid() const {
        return std::isfinite(x1) && std::isfinite(y1) && std::isfinite(x2) &&
               std::isfinite(y2) && x2 > x1 && y2 > y1;
    }
};

inline void require_valid(const Box& b, const char* what) {
    if (!b.valid()) throw std::invalid_argument(std::string(what) + ": degenerate box");
}

// Offsets from a proposal box to its ground-truth box: centers normalized by
// proposal size, sizes as log ratios.
struct RegressionTarget {
    double dx = 0.0;
    double dy = 0.0;
    double dw = 0.0;
    double dh = 0.0;
};

// One draw of the dense-box generator: per-coordinate magnitudes in [0,1]
// and independent signs.
struct JitterSample {
    std::array<double, 4> eta{0.0, 0.0, 0.0, 0.0};
    std::array<int, 4> sign{1, 1, 1, 1};

    bool valid() const {
        for (double e : eta)
            if (!(e >= 0.0 && e <= 1.0)) return false;
        for (int s : sign)
            if (s != -1 && s != 1) return false;
        return true;
    }
};

inline JitterSample random_jitter(std::mt19937_64& rng) {
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    JitterSample j;
    for (int i = 0; i < 4; ++i) {
        j.eta[i] = unit(rng);
        j.sign[i] = (rng() & 1u) ? 1 : -1;
    }
    return j;
}

// Each corner coordinate moves by at most w/6 (resp. h/6), so the smallest
// possible output is a centered box of 2/3 the side length; the generated
// box is always valid and its IoU with gt lies in [4/9, 1].
inline Box generate_box(const Box& gt, const JitterSample& jitter) {
    require_valid(gt, "generate_box");
    if (!jitter.valid()) throw std::invalid_argument("generate_box: bad jitter sample");
    const double w = gt.width();
    const double h = gt.height();
    Box out{gt.x1 + jitter.sign[0] * jitter.eta[0] * w / 6.0,
            gt.y1 + jitter.sign[1] * jitter.eta[1] * h / 6.0,
            gt.x2 + jitter.sign[2] * jitter.eta[2] * w / 6.0,
            gt.y2 + jitter.sign[3] * jitter.eta[3] * h / 6.0};
    require_valid(out, "generate_box output");
    return out;
}

inline double iou(const Box& a, const Box& b) {
    require_valid(a, "iou");
    require_valid(b, "iou");
    const double ix = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
    const double iy = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
    if (ix <= 0.0 || iy <= 0.0) return 0.0;
    const double inter = ix * iy;
    return inter / (a.area() + b.area() - inter);
}

inline RegressionTarget encode_target(const Box& proposal, const Box& gt) {
    require_valid(proposal, "encode_target");
    require_valid(gt, "encode_target");
    return RegressionTarget{(gt.center_x() - proposal.center_x()) / proposal.width(),
                            (gt.center_y() - proposal.center_y()) / proposal.height(),
                            std::log(gt.width() / proposal.width()),
                            std::log(gt.height() / proposal.height())};
}

inline Box decode_target(const Box& proposal, const RegressionTarget& t) {
    require_valid(proposal, "decode_target");
    const double cx = proposal.center_x() + t.dx * proposal.width();
    const double cy = proposal.center_y() + t.dy * proposal.height();
    const double w = proposal.width() * std::exp(t.dw);
    const double h = proposal.height() * std::exp(t.dh);
    return Box{cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h};
}

// Intersects a box with the raster [0,W]x[0,H]. Not applied anywhere by
// default; the synthetic world has no image bounds.
inline Box clip_box(const Box& b, double raster_w, double raster_h) {
    require_valid(b, "clip_box");
    Box out{std::clamp(b.x1, 0.0, raster_w), std::clamp(b.y1, 0.0, raster_h),
            std::clamp(b.x2, 0.0, raster_w), std::clamp(b.y2, 0.0, raster_h)};
    require_valid(out, "clip_box output");
    return out;
}

// Draws jittered boxes until the IoU threshold is met. Threshold <= 4/9
// (including the default 0) accepts the first draw.
inline Box sample_proposal(const Box& gt, std::mt19937_64& rng, double min_iou = 0.0) {
    for (;;) {
        Box candidate = generate_box(gt, random_jitter(rng));
        if (min_iou <= 0.0 || iou(candidate, gt) > min_iou) return candidate;
    }
}

}  // namespace loce
