#include "s2i/core/rng.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace s2i {

uint64_t mix_seed(uint64_t a, uint64_t b, uint64_t c)
{
    auto step = [](uint64_t z) {
        z += 0x9e3779b97f4a7c15ULL;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    };
    return step(step(step(a) ^ b) ^ c);
}

// Distributions are written out by hand so streams do not depend on the
// standard library's unspecified algorithms.
double Rng::uniform(double lo, double hi)
{
    double u = static_cast<double>(engine_() >> 11) * 0x1.0p-53;
    return lo + (hi - lo) * u;
}

double Rng::normal(double mean, double stddev)
{
    double u1 = 0.0;
    while (u1 <= 0.0)
        u1 = uniform();
    double u2 = uniform();
    return mean + stddev * std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
}

int64_t Rng::randint(int64_t lo, int64_t hi)
{
    const uint64_t span = static_cast<uint64_t>(hi - lo);
    if (span == 0)
        throw ContractError("randint on empty range");
    const uint64_t limit = UINT64_MAX - UINT64_MAX % span;
    uint64_t r;
    do {
        r = engine_();
    } while (r >= limit);
    return lo + static_cast<int64_t>(r % span);
}

Tensor Rng::uniform_tensor(const Shape& shape, double lo, double hi, DType dtype)
{
    Tensor t = Tensor::zeros(shape, dtype);
    dispatch(dtype, [&]<class T>() {
        T* d = t.data<T>();
        for (int64_t i = 0, n = t.numel(); i < n; ++i)
            d[i] = static_cast<T>(uniform(lo, hi));
    });
    return t;
}

Tensor Rng::normal_tensor(const Shape& shape, double stddev, DType dtype)
{
    Tensor t = Tensor::zeros(shape, dtype);
    dispatch(dtype, [&]<class T>() {
        T* d = t.data<T>();
        for (int64_t i = 0, n = t.numel(); i < n; ++i)
            d[i] = static_cast<T>(normal(0.0, stddev));
    });
    return t;
}

std::vector<int64_t> Rng::permutation(int64_t n)
{
    std::vector<int64_t> p(n);
    std::iota(p.begin(), p.end(), 0);
    for (int64_t i = n - 1; i > 0; --i)
        std::swap(p[i], p[randint(0, i + 1)]);
    return p;
}

} // namespace s2i
