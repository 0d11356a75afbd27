#include "garsdc/synthetic_detector.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <stdexcept>
#include <string>

#include "garsdc/rng.hpp"

namespace garsdc {

std::string_view to_string(Architecture a) {
  switch (a) {
    case Architecture::linear: return "linear";
    case Architecture::chain: return "chain";
    case Architecture::skip: return "skip";
  }
  return "unknown";
}

Architecture parse_architecture(std::string_view text) {
  if (text == "linear") return Architecture::linear;
  if (text == "chain") return Architecture::chain;
  if (text == "skip") return Architecture::skip;
  throw std::invalid_argument("unknown architecture '" + std::string(text) + "'");
}

std::vector<double> softmax(const std::vector<double>& logits) {
  const double top = *std::max_element(logits.begin(), logits.end());
  std::vector<double> p(logits.size());
  double sum = 0.0;
  for (std::size_t k = 0; k < logits.size(); ++k) {
    p[k] = std::exp(logits[k] - top);
    sum += p[k];
  }
  for (double& v : p) v /= sum;
  return p;
}

namespace {

constexpr double kSkipScale = 0.5;

struct Quadrant {
  int x0, y0, x1, y1;
};

std::array<Quadrant, 4> quadrants_of(const BoundingBox& box) {
  const int x1 = static_cast<int>(box.x1);
  const int y1 = static_cast<int>(box.y1);
  const int x2 = static_cast<int>(box.x2);
  const int y2 = static_cast<int>(box.y2);
  const int xm = x1 + (x2 - x1) / 2;
  const int ym = y1 + (y2 - y1) / 2;
  return {{{x1, y1, xm, ym}, {xm, y1, x2, ym}, {x1, ym, xm, y2}, {xm, ym, x2, y2}}};
}

std::vector<double> gaussian_matrix(Rng& rng, std::size_t rows, std::size_t cols, double scale) {
  std::vector<double> m(rows * cols);
  for (double& v : m) v = scale * rng.normal();
  return m;
}

}  // namespace

SyntheticDetector::SyntheticDetector(SyntheticDetectorSpec spec) : spec_(spec) {
  if (spec_.grid < 2) throw std::invalid_argument("grid must be at least 2 pixels");
  if (spec_.class_count < 2) throw std::invalid_argument("class_count must be at least 2");
  if (spec_.channels < 1) throw std::invalid_argument("channels must be positive");
  const auto classes = static_cast<std::size_t>(spec_.class_count);
  const auto features = static_cast<std::size_t>(feature_count());

  Rng base(spec_.seed);
  projection_ = gaussian_matrix(base, classes, features, 1.0);
  bias_ = gaussian_matrix(base, classes, 1, 0.5);

  Rng noise(splitmix64(spec_.surrogate_seed) ^ 0x5EEDULL);
  if (spec_.surrogate_noise > 0.0) {
    for (double& v : projection_) v += spec_.surrogate_noise * noise.normal();
    for (double& v : bias_) v += spec_.surrogate_noise * noise.normal();
  }
  switch (spec_.architecture) {
    case Architecture::linear: break;
    case Architecture::chain:
      mixing_ = gaussian_matrix(noise, classes, classes, spec_.surrogate_noise);
      for (std::size_t k = 0; k < classes; ++k) mixing_[k * classes + k] += 1.0;
      break;
    case Architecture::skip:
      hidden_ = spec_.class_count;
      skip_in_ = gaussian_matrix(noise, static_cast<std::size_t>(hidden_), features, 1.0);
      skip_out_ = gaussian_matrix(noise, classes, static_cast<std::size_t>(hidden_),
                                  1.0 / std::sqrt(static_cast<double>(hidden_)));
      break;
  }
}

void SyntheticDetector::check_image(const ImageTensor& image) const {
  if (image.channels != spec_.channels) {
    throw std::invalid_argument("image has " + std::to_string(image.channels) + " channels, detector expects " +
                                std::to_string(spec_.channels));
  }
}

std::vector<BoundingBox> SyntheticDetector::proposals(const ImageTensor& image) const {
  check_image(image);
  const int g = spec_.grid;
  const int cols = (image.width + g - 1) / g;
  const int rows = (image.height + g - 1) / g;
  std::vector<char> active(static_cast<std::size_t>(cols) * static_cast<std::size_t>(rows), 0);
  for (int cy = 0; cy < rows; ++cy) {
    for (int cx = 0; cx < cols; ++cx) {
      const int x_end = std::min(image.width, (cx + 1) * g);
      const int y_end = std::min(image.height, (cy + 1) * g);
      double sum = 0.0;
      for (int y = cy * g; y < y_end; ++y) {
        for (int x = cx * g; x < x_end; ++x) {
          for (int ch = 0; ch < image.channels; ++ch) sum += image.at(x, y, ch);
        }
      }
      const double count = static_cast<double>((x_end - cx * g) * (y_end - cy * g) * image.channels);
      active[static_cast<std::size_t>(cy * cols + cx)] = sum / count > spec_.threshold;
    }
  }

  std::vector<BoundingBox> boxes;
  std::vector<char> seen(active.size(), 0);
  std::vector<int> stack;
  for (int start = 0; start < cols * rows; ++start) {
    if (!active[static_cast<std::size_t>(start)] || seen[static_cast<std::size_t>(start)]) continue;
    int min_x = cols, min_y = rows, max_x = -1, max_y = -1;
    stack.assign(1, start);
    seen[static_cast<std::size_t>(start)] = 1;
    while (!stack.empty()) {
      const int cell = stack.back();
      stack.pop_back();
      const int cx = cell % cols;
      const int cy = cell / cols;
      min_x = std::min(min_x, cx);
      max_x = std::max(max_x, cx);
      min_y = std::min(min_y, cy);
      max_y = std::max(max_y, cy);
      const int nx[4] = {cx - 1, cx + 1, cx, cx};
      const int ny[4] = {cy, cy, cy - 1, cy + 1};
      for (int k = 0; k < 4; ++k) {
        if (nx[k] < 0 || ny[k] < 0 || nx[k] >= cols || ny[k] >= rows) continue;
        const auto n = static_cast<std::size_t>(ny[k] * cols + nx[k]);
        if (active[n] && !seen[n]) {
          seen[n] = 1;
          stack.push_back(ny[k] * cols + nx[k]);
        }
      }
    }
    boxes.push_back({static_cast<double>(min_x * g), static_cast<double>(min_y * g),
                     static_cast<double>(std::min(image.width, (max_x + 1) * g)),
                     static_cast<double>(std::min(image.height, (max_y + 1) * g))});
  }
  return boxes;
}

std::vector<double> SyntheticDetector::features(const ImageTensor& image, const BoundingBox& box) const {
  const int c = image.channels;
  std::vector<double> f(static_cast<std::size_t>(feature_count()), 0.0);
  const auto quads = quadrants_of(box);
  for (int q = 0; q < 4; ++q) {
    const Quadrant& r = quads[static_cast<std::size_t>(q)];
    const double n = static_cast<double>((r.x1 - r.x0) * (r.y1 - r.y0));
    for (int ch = 0; ch < c; ++ch) {
      double sum = 0.0;
      for (int y = r.y0; y < r.y1; ++y) {
        for (int x = r.x0; x < r.x1; ++x) sum += image.at(x, y, ch);
      }
      f[static_cast<std::size_t>(q * c + ch)] = sum / n - 0.5;
    }
  }
  return f;
}

std::vector<double> SyntheticDetector::logits(const std::vector<double>& f) const {
  const auto classes = static_cast<std::size_t>(spec_.class_count);
  const auto nf = f.size();
  std::vector<double> a(classes);
  for (std::size_t k = 0; k < classes; ++k) {
    double s = bias_[k];
    for (std::size_t j = 0; j < nf; ++j) s += projection_[k * nf + j] * f[j];
    a[k] = s;
  }
  std::vector<double> z(classes);
  switch (spec_.architecture) {
    case Architecture::linear:
      z = a;
      break;
    case Architecture::chain:
      for (std::size_t k = 0; k < classes; ++k) {
        double s = 0.0;
        for (std::size_t m = 0; m < classes; ++m) s += mixing_[k * classes + m] * std::tanh(a[m]);
        z[k] = s;
      }
      break;
    case Architecture::skip: {
      const auto hidden = static_cast<std::size_t>(hidden_);
      std::vector<double> h(hidden);
      for (std::size_t m = 0; m < hidden; ++m) {
        double s = 0.0;
        for (std::size_t j = 0; j < nf; ++j) s += skip_in_[m * nf + j] * f[j];
        h[m] = std::tanh(s);
      }
      for (std::size_t k = 0; k < classes; ++k) {
        double s = 0.0;
        for (std::size_t m = 0; m < hidden; ++m) s += skip_out_[k * hidden + m] * h[m];
        z[k] = a[k] + kSkipScale * s;
      }
      break;
    }
  }
  for (double& v : z) v *= spec_.gain;
  return z;
}

std::vector<double> SyntheticDetector::logit_jacobian(const std::vector<double>& f) const {
  const auto classes = static_cast<std::size_t>(spec_.class_count);
  const auto nf = f.size();
  std::vector<double> jac(classes * nf, 0.0);
  switch (spec_.architecture) {
    case Architecture::linear:
      jac = projection_;
      break;
    case Architecture::chain: {
      std::vector<double> slope(classes);
      for (std::size_t m = 0; m < classes; ++m) {
        double s = bias_[m];
        for (std::size_t j = 0; j < nf; ++j) s += projection_[m * nf + j] * f[j];
        const double t = std::tanh(s);
        slope[m] = 1.0 - t * t;
      }
      for (std::size_t k = 0; k < classes; ++k) {
        for (std::size_t m = 0; m < classes; ++m) {
          const double w = mixing_[k * classes + m] * slope[m];
          for (std::size_t j = 0; j < nf; ++j) jac[k * nf + j] += w * projection_[m * nf + j];
        }
      }
      break;
    }
    case Architecture::skip: {
      jac = projection_;
      const auto hidden = static_cast<std::size_t>(hidden_);
      std::vector<double> slope(hidden);
      for (std::size_t m = 0; m < hidden; ++m) {
        double s = 0.0;
        for (std::size_t j = 0; j < nf; ++j) s += skip_in_[m * nf + j] * f[j];
        const double t = std::tanh(s);
        slope[m] = 1.0 - t * t;
      }
      for (std::size_t k = 0; k < classes; ++k) {
        for (std::size_t m = 0; m < hidden; ++m) {
          const double w = kSkipScale * skip_out_[k * hidden + m] * slope[m];
          for (std::size_t j = 0; j < nf; ++j) jac[k * nf + j] += w * skip_in_[m * nf + j];
        }
      }
      break;
    }
  }
  for (double& v : jac) v *= spec_.gain;
  return jac;
}

std::vector<Detection> SyntheticDetector::detect(const ImageTensor& image) const {
  std::vector<Detection> out;
  for (const BoundingBox& box : proposals(image)) {
    out.push_back({box, softmax(logits(features(image, box)))});
  }
  return out;
}

ImageTensor SyntheticDetector::objective_gradient(const ImageTensor& image) const {
  ImageTensor grad(image.width, image.height, image.channels, 0.0);
  const auto classes = static_cast<std::size_t>(spec_.class_count);
  const int c = image.channels;
  for (const BoundingBox& box : proposals(image)) {
    const auto f = features(image, box);
    const auto p = softmax(logits(f));
    const auto k = static_cast<std::size_t>(std::max_element(p.begin(), p.end()) - p.begin());
    const auto jac = logit_jacobian(f);
    // d log p_k / d z = e_k - p
    std::vector<double> df(f.size(), 0.0);
    for (std::size_t m = 0; m < classes; ++m) {
      const double dz = (m == k ? 1.0 : 0.0) - p[m];
      for (std::size_t j = 0; j < f.size(); ++j) df[j] += dz * jac[m * f.size() + j];
    }
    const auto quads = quadrants_of(box);
    for (int q = 0; q < 4; ++q) {
      const Quadrant& r = quads[static_cast<std::size_t>(q)];
      const double n = static_cast<double>((r.x1 - r.x0) * (r.y1 - r.y0));
      for (int y = r.y0; y < r.y1; ++y) {
        for (int x = r.x0; x < r.x1; ++x) {
          for (int ch = 0; ch < c; ++ch) grad.at(x, y, ch) += df[static_cast<std::size_t>(q * c + ch)] / n;
        }
      }
    }
  }
  return grad;
}

}  // namespace garsdc
