#pragma once

// Second, independent implementation of the per-class Dirichlet cut-point
// partitioner. Shares nothing with src/ except the documented algorithm:
// SplitMix64 streams seeded with seed ^ mix(class), Fisher-Yates with
// rejection-sampled bounded integers, Marsaglia polar normals, Marsaglia-Tsang
// gamma with the U^(1/a) boost, round-half-away-from-zero cut points and the
// largest-to-empty repair rule.

#include <cmath>
#include <cstdint>
#include <vector>

namespace oracle {

struct SplitMix {
    std::uint64_t s;
    std::uint64_t next() {
        s += 0x9E3779B97F4A7C15ULL;
        std::uint64_t z = s;
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }
    double open01() { return (double(next() >> 11) + 0.5) / 9007199254740992.0; }
    std::uint64_t bounded(std::uint64_t n) {
        const std::uint64_t top = UINT64_MAX - UINT64_MAX % n;
        for (;;) {
            const std::uint64_t x = next();
            if (x < top) return x % n;
        }
    }
    double gauss() {
        for (;;) {
            const double a = 2.0 * open01() - 1.0, b = 2.0 * open01() - 1.0;
            const double r = a * a + b * b;
            if (r > 0.0 && r < 1.0) return a * std::sqrt(-2.0 * std::log(r) / r);
        }
    }
    double gamma(double k) {
        if (k < 1.0) {
            const double g = gamma(k + 1.0);
            return g * std::pow(open01(), 1.0 / k);
        }
        const double d = k - 1.0 / 3.0, c = 1.0 / std::sqrt(9.0 * d);
        for (;;) {
            double x = gauss(), v = 1.0 + c * x;
            while (v <= 0.0) {
                x = gauss();
                v = 1.0 + c * x;
            }
            v = v * v * v;
            const double u = open01();
            if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
            if (std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
        }
    }
};

inline std::uint64_t mix(std::uint64_t k) { return SplitMix{k}.next(); }

inline std::vector<std::vector<std::size_t>> dirichlet_partition(const std::vector<std::uint32_t>& labels,
                                                                 std::size_t num_classes, std::size_t clients,
                                                                 double alpha, std::uint64_t seed) {
    std::vector<std::vector<std::size_t>> shards(clients);
    for (std::size_t c = 0; c < num_classes; ++c) {
        std::vector<std::size_t> idx;
        for (std::size_t i = 0; i < labels.size(); ++i)
            if (labels[i] == c) idx.push_back(i);
        SplitMix rng{seed ^ mix(c)};
        for (std::size_t i = idx.size(); i >= 2; --i) {
            const std::size_t j = rng.bounded(i);
            const std::size_t tmp = idx[i - 1];
            idx[i - 1] = idx[j];
            idx[j] = tmp;
        }
        std::vector<double> g(clients);
        double sum = 0.0;
        for (std::size_t i = 0; i < clients; ++i) {
            g[i] = rng.gamma(alpha);
            sum += g[i];
        }
        std::size_t lo = 0;
        double acc = 0.0;
        for (std::size_t i = 0; i < clients; ++i) {
            acc += g[i] / sum;
            std::size_t hi = (i == clients - 1) ? idx.size() : std::size_t(std::llround(acc * double(idx.size())));
            if (hi < lo) hi = lo;
            if (hi > idx.size()) hi = idx.size();
            for (std::size_t k = lo; k < hi; ++k) shards[i].push_back(idx[k]);
            lo = hi;
        }
    }
    for (;;) {
        std::size_t empty = clients, largest = 0;
        for (std::size_t i = 0; i < clients; ++i) {
            if (shards[i].empty() && empty == clients) empty = i;
            if (shards[i].size() > shards[largest].size()) largest = i;
        }
        if (empty == clients) break;
        shards[empty].push_back(shards[largest].back());
        shards[largest].pop_back();
    }
    return shards;
}

} // namespace oracle
