#pragma once

#include <cmath>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "tgqn/scene/scene_forge.hpp"

namespace tgqn::model {

inline void check_same_size(const scene::Frame& a, const scene::Frame& b,
                            const char* who) {
  if (a.shape() != b.shape())
    throw std::invalid_argument(std::string(who) + ": shape mismatch");
}

// Mean absolute difference on the 0-255 scale.
inline double pixel_l1(const scene::Frame& a, const scene::Frame& b) {
  check_same_size(a, b, "pixel_l1");
  long double acc = 0;
  for (std::size_t i = 0; i < a.size(); ++i)
    acc += std::fabs(255.0L * a[i] - 255.0L * b[i]);
  return static_cast<double>(acc / static_cast<long double>(a.size()));
}

// Root-mean-square difference on the 0-255 scale.
inline double pixel_l2(const scene::Frame& a, const scene::Frame& b) {
  check_same_size(a, b, "pixel_l2");
  long double acc = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const long double d = 255.0L * a[i] - 255.0L * b[i];
    acc += d * d;
  }
  return std::sqrt(static_cast<double>(acc / static_cast<long double>(a.size())));
}

namespace detail {

inline std::vector<double> gaussian_window(int size, double sigma) {
  std::vector<double> w(static_cast<std::size_t>(size) * size);
  const int half = size / 2;
  double total = 0;
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      const double dy = y - half, dx = x - half;
      const double v = std::exp(-(dx * dx + dy * dy) / (2 * sigma * sigma));
      w[static_cast<std::size_t>(y) * size + x] = v;
      total += v;
    }
  for (auto& v : w) v /= total;
  return w;
}

}  // namespace detail

// Mean structural similarity: 11x11 Gaussian window (sigma 1.5), k1 = 0.01,
// k2 = 0.03, dynamic range 1.0, averaged over the valid window positions of
// each channel and then over channels.
inline double ssim(const scene::Frame& a, const scene::Frame& b) {
  check_same_size(a, b, "ssim");
  constexpr int kWin = 11;
  const int h = a.dim(0), w = a.dim(1);
  if (h < kWin || w < kWin)
    throw std::invalid_argument("ssim: image smaller than 11x11 window");
  static const std::vector<double> win = detail::gaussian_window(kWin, 1.5);
  constexpr double kC1 = 0.01 * 0.01;  // (k1 * L)^2 with L = 1
  constexpr double kC2 = 0.03 * 0.03;

  double channel_mean = 0;
  for (int c = 0; c < 3; ++c) {
    long double acc = 0;
    int count = 0;
    for (int y = 0; y + kWin <= h; ++y)
      for (int x = 0; x + kWin <= w; ++x) {
        double mu_a = 0, mu_b = 0;
        for (int i = 0; i < kWin; ++i)
          for (int j = 0; j < kWin; ++j) {
            const double wij = win[static_cast<std::size_t>(i) * kWin + j];
            mu_a += wij * a.at(y + i, x + j, c);
            mu_b += wij * b.at(y + i, x + j, c);
          }
        double var_a = 0, var_b = 0, cov = 0;
        for (int i = 0; i < kWin; ++i)
          for (int j = 0; j < kWin; ++j) {
            const double wij = win[static_cast<std::size_t>(i) * kWin + j];
            const double da = a.at(y + i, x + j, c) - mu_a;
            const double db = b.at(y + i, x + j, c) - mu_b;
            var_a += wij * da * da;
            var_b += wij * db * db;
            cov += wij * da * db;
          }
        const double num = (2 * mu_a * mu_b + kC1) * (2 * cov + kC2);
        const double den =
            (mu_a * mu_a + mu_b * mu_b + kC1) * (var_a + var_b + kC2);
        acc += num / den;
        ++count;
      }
    channel_mean += static_cast<double>(acc) / count;
  }
  return channel_mean / 3.0;
}

struct MetricsReport {
  double l1_mean = 0, l1_std = 0;
  double l2_mean = 0, l2_std = 0;
  double ssim_mean = 0, ssim_std = 0;
  long long num_images = 0;
};

// Accumulates per-image metric values; the report carries mean and sample
// standard deviation across all evaluated images.
class MetricsAccumulator {
 public:
  void add(double l1, double l2, double ssim_v) {
    l1_.push_back(l1);
    l2_.push_back(l2);
    ssim_.push_back(ssim_v);
  }

  void add_pair(const scene::Frame& truth, const scene::Frame& pred) {
    add(pixel_l1(truth, pred), pixel_l2(truth, pred), ssim(truth, pred));
  }

  MetricsReport report() const {
    MetricsReport r;
    r.num_images = static_cast<long long>(l1_.size());
    mean_std(l1_, r.l1_mean, r.l1_std);
    mean_std(l2_, r.l2_mean, r.l2_std);
    mean_std(ssim_, r.ssim_mean, r.ssim_std);
    return r;
  }

 private:
  static void mean_std(const std::vector<double>& v, double& mean,
                       double& std_dev) {
    if (v.empty()) {
      mean = std_dev = 0;
      return;
    }
    long double acc = 0;
    for (double x : v) acc += x;
    mean = static_cast<double>(acc / v.size());
    if (v.size() < 2) {
      std_dev = 0;
      return;
    }
    long double sq = 0;
    for (double x : v) sq += (x - mean) * (x - mean);
    std_dev = std::sqrt(static_cast<double>(sq / (v.size() - 1)));
  }

  std::vector<double> l1_, l2_, ssim_;
};

inline std::string metrics_csv_header() {
  return "variant,seed,l1_mean,l1_std,l2_mean,l2_std,ssim_mean,ssim_std,"
         "num_images";
}

inline std::string metrics_csv_row(const std::string& variant,
                                   std::uint64_t seed,
                                   const MetricsReport& r) {
  std::ostringstream os;
  os.precision(17);
  os << variant << "," << seed << "," << r.l1_mean << "," << r.l1_std << ","
     << r.l2_mean << "," << r.l2_std << "," << r.ssim_mean << "," << r.ssim_std
     << "," << r.num_images;
  return os.str();
}

inline std::string metrics_text(const MetricsReport& r) {
  std::ostringstream os;
  os.precision(17);
  os << "l1_mean=" << r.l1_mean << "\nl1_std=" << r.l1_std
     << "\nl2_mean=" << r.l2_mean << "\nl2_std=" << r.l2_std
     << "\nssim_mean=" << r.ssim_mean << "\nssim_std=" << r.ssim_std
     << "\nnum_images=" << r.num_images << "\n";
  return os.str();
}

}  // namespace tgqn::model
