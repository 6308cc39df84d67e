#pragma once

// Independent reference computations used by the tests. Nothing here calls
// into the library's metric or loss code.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "dfb/nnet.hpp"

namespace oracle {

inline double logsumexp_naive(const std::vector<double>& x) {
    long double s = 0;
    for (double v : x) s += std::exp(static_cast<long double>(v));
    return static_cast<double>(std::log(s));
}

inline double central_difference(const std::function<double(double)>& f, double x, double h) {
    return (f(x + h) - f(x - h)) / (2 * h);
}

inline double relative_error(double a, double b, double floor = 1e-8) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

// Exhaustive pairwise AUC with half credit for ties.
inline double pairwise_auc(const std::vector<double>& s, const std::vector<int>& y) {
    double num = 0, den = 0;
    for (std::size_t i = 0; i < s.size(); ++i)
        for (std::size_t j = 0; j < s.size(); ++j)
            if (y[i] == 1 && y[j] == 0) {
                den += 1;
                num += s[i] > s[j] ? 1.0 : s[i] == s[j] ? 0.5 : 0.0;
            }
    return num / den;
}

// ROC by sweeping every distinct threshold, then trapezoids clipped to
// [0, max_fpr] with linear interpolation at the boundary.
inline double brute_pauc(const std::vector<double>& s, const std::vector<int>& y, double max_fpr) {
    std::vector<double> th(s.begin(), s.end());
    th.push_back(std::numeric_limits<double>::infinity());
    std::sort(th.begin(), th.end(), std::greater<>());
    th.erase(std::unique(th.begin(), th.end()), th.end());
    double P = 0, N = 0;
    for (int v : y) (v ? P : N) += 1;
    std::vector<std::pair<double, double>> roc;
    for (double t : th) {
        double tp = 0, fp = 0;
        for (std::size_t i = 0; i < s.size(); ++i)
            if (s[i] >= t) (y[i] ? tp : fp) += 1;
        roc.emplace_back(fp / N, tp / P);
    }
    double area = 0;
    for (std::size_t i = 1; i < roc.size(); ++i) {
        auto [x0, y0] = roc[i - 1];
        auto [x1, y1] = roc[i];
        if (x0 >= max_fpr) break;
        if (x1 > max_fpr) {
            y1 = y0 + (y1 - y0) * (max_fpr - x0) / (x1 - x0);
            x1 = max_fpr;
        }
        area += (x1 - x0) * (y0 + y1) / 2;
    }
    return area / max_fpr;
}

inline double population_variance(const std::vector<double>& v) {
    double m = 0;
    for (double x : v) m += x;
    m /= static_cast<double>(v.size());
    double s = 0;
    for (double x : v) s += (x - m) * (x - m);
    return s / static_cast<double>(v.size());
}

inline double sample_stddev(const std::vector<double>& v) {
    double m = 0;
    for (double x : v) m += x;
    m /= static_cast<double>(v.size());
    double s = 0;
    for (double x : v) s += (x - m) * (x - m);
    return std::sqrt(s / static_cast<double>(v.size() - 1));
}

inline dfb::Matrix random_matrix(std::size_t rows, std::size_t cols, std::uint64_t seed, double scale = 1.0) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n(0.0, scale);
    dfb::Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = n(rng);
    return m;
}

inline std::string read_file(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// Fresh scratch directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
    auto p = std::filesystem::temp_directory_path() / ("dfb_test_" + name);
    std::filesystem::remove_all(p);
    std::filesystem::create_directories(p);
    return p;
}

}  // namespace oracle
