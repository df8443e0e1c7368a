#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "calli/linalg.hpp"
#include "calli/rng.hpp"

namespace calli::nn {

// One parameter tensor with its gradient and Adam moments. Layers own their
// Params; optimizers and checkpoints see a flat ordered list of pointers.
struct Param {
    std::string name;
    Matrix w;
    Matrix g;
    Matrix m;
    Matrix v;

    Param() = default;
    Param(std::string n, Eigen::Index rows, Eigen::Index cols)
        : name(std::move(n)),
          w(Matrix::Zero(rows, cols)),
          g(Matrix::Zero(rows, cols)),
          m(Matrix::Zero(rows, cols)),
          v(Matrix::Zero(rows, cols)) {}

    std::size_t size() const { return static_cast<std::size_t>(w.size()); }
    void zero_grad() { g.setZero(); }
};

using ParamList = std::vector<Param*>;

std::size_t total_size(const ParamList& params);
void zero_grads(const ParamList& params);
bool params_equal(const ParamList& a, const ParamList& b);

void init_gaussian(Param& p, Rng& rng, double stddev);

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

class Adam {
public:
    explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}
    void set_lr(double lr) { cfg_.lr = lr; }
    double lr() const { return cfg_.lr; }
    void step(const ParamList& params);
    void reset() { t_ = 0; }

private:
    AdamConfig cfg_;
    long long t_ = 0;
};

// Raw binary parameter blob: count, then per tensor name/shape/doubles.
// Readers verify that names and shapes match the receiving model.
void write_params(std::ostream& out, const ParamList& params);
void read_params(std::istream& in, const ParamList& params);

}  // namespace calli::nn
