#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

namespace garsdc {

/// Dense image, row-major with interleaved channels:
/// data[(y * width + x) * channels + ch], values in [0, 1].
struct ImageTensor {
  int width = 0;
  int height = 0;
  int channels = 3;
  std::vector<double> data;

  ImageTensor() = default;
  ImageTensor(int w, int h, int c, double fill = 0.0);

  std::size_t size() const { return data.size(); }
  std::size_t index(int x, int y, int ch) const {
    return (static_cast<std::size_t>(y) * static_cast<std::size_t>(width) + static_cast<std::size_t>(x)) *
               static_cast<std::size_t>(channels) +
           static_cast<std::size_t>(ch);
  }
  double& at(int x, int y, int ch) { return data[index(x, y, ch)]; }
  double at(int x, int y, int ch) const { return data[index(x, y, ch)]; }

  bool same_shape(const ImageTensor& other) const {
    return width == other.width && height == other.height && channels == other.channels;
  }
};

/// Throws std::invalid_argument on a bad shape or a value outside [0,1].
void validate(const ImageTensor& image);

/// L-infinity bounded additive perturbation with the image's layout.
struct Perturbation {
  int width = 0;
  int height = 0;
  int channels = 3;
  double epsilon = 0.05;
  std::vector<double> data;

  Perturbation() = default;
  Perturbation(int w, int h, int c, double eps);

  static Perturbation zeros_like(const ImageTensor& image, double eps);

  std::size_t size() const { return data.size(); }
  std::size_t index(int x, int y, int ch) const {
    return (static_cast<std::size_t>(y) * static_cast<std::size_t>(width) + static_cast<std::size_t>(x)) *
               static_cast<std::size_t>(channels) +
           static_cast<std::size_t>(ch);
  }
  double& at(int x, int y, int ch) { return data[index(x, y, ch)]; }
  double at(int x, int y, int ch) const { return data[index(x, y, ch)]; }

  double linf() const;
  bool fits(const ImageTensor& image) const {
    return width == image.width && height == image.height && channels == image.channels;
  }

  friend bool operator==(const Perturbation&, const Perturbation&) = default;
};

/// clamp(x + delta, 0, 1). Shapes must agree.
ImageTensor apply_perturbation(const ImageTensor& image, const Perturbation& delta);

/// Binary PPM (P6, maxval 255) reader/writer; values are k/255.
ImageTensor read_ppm(const std::filesystem::path& path);
void write_ppm(const std::filesystem::path& path, const ImageTensor& image);

/// Perturbation files: 16-byte header of little-endian uint32
/// {magic, width, height, channels} followed by width*height*channels
/// little-endian float32 values in ImageTensor layout.
inline constexpr std::uint32_t kPerturbationMagic = 0x54524750;  // bytes "PGRT" on disk

void save_perturbation(const std::filesystem::path& path, const Perturbation& delta);

/// Loads a perturbation for `target`. Values beyond +/-epsilon are clamped
/// (float32 rounding of exactly epsilon is absorbed silently); `warn` is
/// called once when a real clamp happened. Throws std::runtime_error on a
/// malformed file or a shape mismatch.
Perturbation load_seed_perturbation(const std::filesystem::path& path, const ImageTensor& target, double epsilon,
                                    const std::function<void(const std::string&)>& warn = {});

}  // namespace garsdc
