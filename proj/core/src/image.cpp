#include "garsdc/image.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace garsdc {

ImageTensor::ImageTensor(int w, int h, int c, double fill) : width(w), height(h), channels(c) {
  if (w <= 0 || h <= 0 || c <= 0) throw std::invalid_argument("image dimensions must be positive");
  data.assign(static_cast<std::size_t>(w) * static_cast<std::size_t>(h) * static_cast<std::size_t>(c), fill);
}

void validate(const ImageTensor& image) {
  if (image.width <= 0 || image.height <= 0 || image.channels <= 0) {
    throw std::invalid_argument("image dimensions must be positive");
  }
  if (image.data.size() != static_cast<std::size_t>(image.width) * static_cast<std::size_t>(image.height) *
                               static_cast<std::size_t>(image.channels)) {
    throw std::invalid_argument("image payload size does not match its shape");
  }
  for (double v : image.data) {
    if (!(v >= 0.0 && v <= 1.0)) throw std::invalid_argument("image value outside [0,1]");
  }
}

Perturbation::Perturbation(int w, int h, int c, double eps) : width(w), height(h), channels(c), epsilon(eps) {
  if (w <= 0 || h <= 0 || c <= 0) throw std::invalid_argument("perturbation dimensions must be positive");
  if (!(eps > 0.0)) throw std::invalid_argument("epsilon must be positive");
  data.assign(static_cast<std::size_t>(w) * static_cast<std::size_t>(h) * static_cast<std::size_t>(c), 0.0);
}

Perturbation Perturbation::zeros_like(const ImageTensor& image, double eps) {
  return Perturbation(image.width, image.height, image.channels, eps);
}

double Perturbation::linf() const {
  double m = 0.0;
  for (double v : data) m = std::max(m, std::abs(v));
  return m;
}

ImageTensor apply_perturbation(const ImageTensor& image, const Perturbation& delta) {
  if (!delta.fits(image)) throw std::invalid_argument("perturbation shape does not match image");
  ImageTensor out;
  out.width = image.width;
  out.height = image.height;
  out.channels = image.channels;
  out.data.resize(image.data.size());
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = std::clamp(image.data[i] + delta.data[i], 0.0, 1.0);
  return out;
}

namespace {

std::string next_token(std::istream& in) {
  std::string token;
  for (;;) {
    int ch = in.peek();
    if (ch == EOF) break;
    if (ch == '#') {
      std::string comment;
      std::getline(in, comment);
      continue;
    }
    if (std::isspace(ch)) {
      in.get();
      if (!token.empty()) break;
      continue;
    }
    token.push_back(static_cast<char>(in.get()));
  }
  return token;
}

void put_u32(std::ostream& out, std::uint32_t v) {
  std::array<unsigned char, 4> b{static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                                 static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  out.write(reinterpret_cast<const char*>(b.data()), 4);
}

std::uint32_t get_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

}  // namespace

ImageTensor read_ppm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open image " + path.string());
  if (next_token(in) != "P6") throw std::runtime_error(path.string() + ": not a binary PPM (P6)");
  const int w = std::stoi(next_token(in));
  const int h = std::stoi(next_token(in));
  const int maxval = std::stoi(next_token(in));
  if (maxval != 255) throw std::runtime_error(path.string() + ": only maxval 255 is supported");
  ImageTensor img(w, h, 3);
  std::vector<unsigned char> raw(img.data.size());
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (in.gcount() != static_cast<std::streamsize>(raw.size())) throw std::runtime_error(path.string() + ": truncated");
  for (std::size_t i = 0; i < raw.size(); ++i) img.data[i] = raw[i] / 255.0;
  return img;
}

void write_ppm(const std::filesystem::path& path, const ImageTensor& image) {
  if (image.channels != 3) throw std::invalid_argument("PPM output requires 3 channels");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write image " + path.string());
  out << "P6\n" << image.width << ' ' << image.height << "\n255\n";
  std::vector<unsigned char> raw(image.data.size());
  for (std::size_t i = 0; i < raw.size(); ++i) {
    raw[i] = static_cast<unsigned char>(std::lround(std::clamp(image.data[i], 0.0, 1.0) * 255.0));
  }
  out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
}

void save_perturbation(const std::filesystem::path& path, const Perturbation& delta) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write perturbation " + path.string());
  put_u32(out, kPerturbationMagic);
  put_u32(out, static_cast<std::uint32_t>(delta.width));
  put_u32(out, static_cast<std::uint32_t>(delta.height));
  put_u32(out, static_cast<std::uint32_t>(delta.channels));
  for (double v : delta.data) put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

Perturbation load_seed_perturbation(const std::filesystem::path& path, const ImageTensor& target, double epsilon,
                                    const std::function<void(const std::string&)>& warn) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open perturbation " + path.string());
  std::array<unsigned char, 16> header{};
  in.read(reinterpret_cast<char*>(header.data()), header.size());
  if (in.gcount() != 16) throw std::runtime_error(path.string() + ": truncated header");
  if (get_u32(header.data()) != kPerturbationMagic) throw std::runtime_error(path.string() + ": bad magic");
  const auto w = get_u32(header.data() + 4);
  const auto h = get_u32(header.data() + 8);
  const auto c = get_u32(header.data() + 12);
  if (static_cast<int>(w) != target.width || static_cast<int>(h) != target.height ||
      static_cast<int>(c) != target.channels) {
    throw std::runtime_error(path.string() + ": shape " + std::to_string(w) + "x" + std::to_string(h) + "x" +
                             std::to_string(c) + " does not match the target image");
  }
  Perturbation delta(target.width, target.height, target.channels, epsilon);
  std::vector<unsigned char> raw(delta.size() * 4);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (in.gcount() != static_cast<std::streamsize>(raw.size())) throw std::runtime_error(path.string() + ": truncated");

  // float32 cannot hold epsilon exactly; anything within this slack is not a real clamp
  const double slack = epsilon * 1e-6;
  std::size_t clamped = 0;
  for (std::size_t i = 0; i < delta.size(); ++i) {
    const double v = std::bit_cast<float>(get_u32(raw.data() + 4 * i));
    if (!std::isfinite(v)) throw std::runtime_error(path.string() + ": non-finite value");
    if (std::abs(v) > epsilon + slack) ++clamped;
    double out = std::clamp(v, -epsilon, epsilon);
    if (std::abs(std::abs(v) - epsilon) <= slack) out = v > 0 ? epsilon : -epsilon;
    delta.data[i] = out;
  }
  if (clamped > 0 && warn) {
    std::ostringstream msg;
    msg << path.string() << ": clamped " << clamped << " value(s) to +/-" << epsilon;
    warn(msg.str());
  }
  return delta;
}

}  // namespace garsdc
