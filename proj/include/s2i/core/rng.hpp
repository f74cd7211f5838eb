#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "s2i/core/tensor.hpp"

namespace s2i {

// splitmix64 finaliser; used to derive independent stream seeds.
uint64_t mix_seed(uint64_t a, uint64_t b = 0, uint64_t c = 0);

class Rng {
public:
    explicit Rng(uint64_t seed) : engine_(seed) {}

    uint64_t next_u64() { return engine_(); }
    double uniform(double lo = 0.0, double hi = 1.0);
    double normal(double mean = 0.0, double stddev = 1.0);
    int64_t randint(int64_t lo, int64_t hi_exclusive);

    Tensor uniform_tensor(const Shape& shape, double lo, double hi, DType dtype = DType::F32);
    Tensor normal_tensor(const Shape& shape, double stddev = 1.0, DType dtype = DType::F32);
    std::vector<int64_t> permutation(int64_t n);

private:
    std::mt19937_64 engine_;
};

} // namespace s2i
