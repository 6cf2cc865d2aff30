#pragma once
// The trainable scorer: a one-hidden-layer backbone over world features plus
// affine classification and box-regression heads. Stage 1 trains everything;
// stage 2 freezes the backbone and touches only the heads. Checkpoints are a
// flat little-endian binary: magic, dimension header, then each tensor as
// row-major float64 in a fixed order.

#include <Eigen/Core>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <random>
#include <stdexcept>

#include "loce/hashing.hpp"

namespace loce {

struct Model {
    // backbone: feature_dim -> hidden -> embed
    Eigen::MatrixXd W1;
    Eigen::VectorXd b1;
    Eigen::MatrixXd W2;
    Eigen::VectorXd b2;
    // heads: embed -> C+1 logits, embed -> 4 box deltas
    Eigen::MatrixXd Wc;
    Eigen::VectorXd bc;
    Eigen::MatrixXd Wb;
    Eigen::VectorXd bb;

    std::size_t feature_dim() const { return static_cast<std::size_t>(W1.cols()); }
    std::size_t hidden_dim() const { return static_cast<std::size_t>(W1.rows()); }
    std::size_t embed_dim() const { return static_cast<std::size_t>(W2.rows()); }
    std::size_t num_outputs() const { return static_cast<std::size_t>(Wc.rows()); }

    static Model init(std::size_t feature_dim, std::size_t hidden_dim, std::size_t embed_dim,
                      std::size_t num_outputs, std::mt19937_64& rng) {
        if (feature_dim == 0 || hidden_dim == 0 || embed_dim == 0 || num_outputs < 2)
            throw std::invalid_argument("model: bad dimensions");
        Model m;
        m.W1 = xavier(hidden_dim, feature_dim, rng);
        m.b1 = Eigen::VectorXd::Zero(hidden_dim);
        m.W2 = xavier(embed_dim, hidden_dim, rng);
        m.b2 = Eigen::VectorXd::Zero(embed_dim);
        m.Wc = xavier(num_outputs, embed_dim, rng);
        m.bc = Eigen::VectorXd::Zero(num_outputs);
        m.Wb = xavier(4, embed_dim, rng);
        m.bb = Eigen::VectorXd::Zero(4);
        return m;
    }

    // Heads can be re-initialized without disturbing the backbone (optional
    // stage-2 behavior; default carries them over).
    void reinit_heads(std::mt19937_64& rng) {
        Wc = xavier(num_outputs(), embed_dim(), rng);
        bc.setZero();
        Wb = xavier(4, embed_dim(), rng);
        bb.setZero();
    }

    // Batched backbone forward; columns are instances.
    Eigen::MatrixXd backbone(const Eigen::MatrixXd& x) const {
        Eigen::MatrixXd h = ((W1 * x).colwise() + b1).array().tanh();
        return (W2 * h).colwise() + b2;
    }

    // Forward with intermediates kept for backprop.
    struct Trace {
        Eigen::MatrixXd h;      // tanh(W1 x + b1)
        Eigen::MatrixXd embed;  // W2 h + b2
    };
    Trace backbone_trace(const Eigen::MatrixXd& x) const {
        Trace t;
        t.h = ((W1 * x).colwise() + b1).array().tanh();
        t.embed = (W2 * t.h).colwise() + b2;
        return t;
    }

    Eigen::MatrixXd logits(const Eigen::MatrixXd& embed) const {
        return (Wc * embed).colwise() + bc;
    }
    Eigen::MatrixXd box_pred(const Eigen::MatrixXd& embed) const {
        return (Wb * embed).colwise() + bb;
    }

    bool finite() const {
        return W1.allFinite() && b1.allFinite() && W2.allFinite() && b2.allFinite() &&
               Wc.allFinite() && bc.allFinite() && Wb.allFinite() && bb.allFinite();
    }

    // Bitwise checksum of the backbone parameters; stage 2 must not change it.
    std::uint64_t backbone_checksum() const {
        std::uint64_t h = 0xcbf29ce484222325ULL;
        auto mix = [&](const Eigen::MatrixXd& m) {
            for (Eigen::Index i = 0; i < m.size(); ++i)
                h = hash_combine(h, double_bits(m.data()[i]));
        };
        mix(W1);
        mix(b1);
        mix(W2);
        mix(b2);
        return h;
    }

    void save(std::ostream& os) const {
        os.write(kMagic, 8);
        write_u64(os, feature_dim());
        write_u64(os, hidden_dim());
        write_u64(os, embed_dim());
        write_u64(os, num_outputs());
        write_tensor(os, W1);
        write_tensor(os, b1);
        write_tensor(os, W2);
        write_tensor(os, b2);
        write_tensor(os, Wc);
        write_tensor(os, bc);
        write_tensor(os, Wb);
        write_tensor(os, bb);
        if (!os) throw std::runtime_error("model checkpoint: write failed");
    }

    static Model load(std::istream& is) {
        char magic[8];
        is.read(magic, 8);
        if (!is || std::memcmp(magic, kMagic, 8) != 0)
            throw std::runtime_error("model checkpoint: bad magic");
        const std::uint64_t d = read_u64(is);
        const std::uint64_t h = read_u64(is);
        const std::uint64_t e = read_u64(is);
        const std::uint64_t o = read_u64(is);
        if (d == 0 || h == 0 || e == 0 || o < 2)
            throw std::runtime_error("model checkpoint: bad dimension header");
        Model m;
        m.W1 = read_tensor(is, h, d);
        m.b1 = read_tensor(is, h, 1);
        m.W2 = read_tensor(is, e, h);
        m.b2 = read_tensor(is, e, 1);
        m.Wc = read_tensor(is, o, e);
        m.bc = read_tensor(is, o, 1);
        m.Wb = read_tensor(is, 4, e);
        m.bb = read_tensor(is, 4, 1);
        if (!is) throw std::runtime_error("model checkpoint: truncated file");
        return m;
    }

private:
    static constexpr const char kMagic[9] = "LOCEMDL1";

    static Eigen::MatrixXd xavier(std::size_t rows, std::size_t cols, std::mt19937_64& rng) {
        const double a = std::sqrt(6.0 / static_cast<double>(rows + cols));
        std::uniform_real_distribution<double> u(-a, a);
        Eigen::MatrixXd m(rows, cols);
        for (Eigen::Index r = 0; r < m.rows(); ++r)
            for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = u(rng);
        return m;
    }

    static void write_u64(std::ostream& os, std::uint64_t v) {
        os.write(reinterpret_cast<const char*>(&v), sizeof(v));
    }
    static std::uint64_t read_u64(std::istream& is) {
        std::uint64_t v = 0;
        is.read(reinterpret_cast<char*>(&v), sizeof(v));
        return v;
    }
    static void write_tensor(std::ostream& os, const Eigen::MatrixXd& m) {
        for (Eigen::Index r = 0; r < m.rows(); ++r)
            for (Eigen::Index c = 0; c < m.cols(); ++c) {
                const double v = m(r, c);
                os.write(reinterpret_cast<const char*>(&v), sizeof(v));
            }
    }
    static void write_tensor(std::ostream& os, const Eigen::VectorXd& v) {
        for (Eigen::Index i = 0; i < v.size(); ++i) {
            const double x = v[i];
            os.write(reinterpret_cast<const char*>(&x), sizeof(x));
        }
    }
    static Eigen::MatrixXd read_tensor(std::istream& is, std::uint64_t rows, std::uint64_t cols) {
        Eigen::MatrixXd m(rows, cols);
        for (Eigen::Index r = 0; r < m.rows(); ++r)
            for (Eigen::Index c = 0; c < m.cols(); ++c) {
                double v = 0.0;
                is.read(reinterpret_cast<char*>(&v), sizeof(v));
                m(r, c) = v;
            }
        return m;
    }
};

}  // namespace loce
