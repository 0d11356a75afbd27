#include "garsdc/wire.hpp"

#include <arpa/inet.h>
#include <fcntl.h>
#include <netdb.h>
#include <poll.h>
#include <signal.h>
#include <sys/socket.h>
#include <sys/wait.h>
#include <unistd.h>

#include <array>
#include <bit>
#include <cerrno>
#include <cstring>
#include <stdexcept>

#include "json.hpp"

namespace garsdc::wire {

using nlohmann::json;

namespace {

constexpr std::string_view kAlphabet = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";

int decode_char(char c) {
  if (c >= 'A' && c <= 'Z') return c - 'A';
  if (c >= 'a' && c <= 'z') return c - 'a' + 26;
  if (c >= '0' && c <= '9') return c - '0' + 52;
  if (c == '+') return 62;
  if (c == '/') return 63;
  return -1;
}

// float32 round trip through JSON: store the float widened to double.
double f32(double v) { return static_cast<double>(static_cast<float>(v)); }

}  // namespace

std::string base64_encode(std::span<const std::uint8_t> bytes) {
  std::string out;
  out.reserve((bytes.size() + 2) / 3 * 4);
  std::size_t i = 0;
  for (; i + 3 <= bytes.size(); i += 3) {
    const std::uint32_t v = (bytes[i] << 16) | (bytes[i + 1] << 8) | bytes[i + 2];
    out += kAlphabet[(v >> 18) & 63];
    out += kAlphabet[(v >> 12) & 63];
    out += kAlphabet[(v >> 6) & 63];
    out += kAlphabet[v & 63];
  }
  const std::size_t rest = bytes.size() - i;
  if (rest == 1) {
    const std::uint32_t v = bytes[i] << 16;
    out += kAlphabet[(v >> 18) & 63];
    out += kAlphabet[(v >> 12) & 63];
    out += "==";
  } else if (rest == 2) {
    const std::uint32_t v = (bytes[i] << 16) | (bytes[i + 1] << 8);
    out += kAlphabet[(v >> 18) & 63];
    out += kAlphabet[(v >> 12) & 63];
    out += kAlphabet[(v >> 6) & 63];
    out += '=';
  }
  return out;
}

std::vector<std::uint8_t> base64_decode(std::string_view text) {
  if (text.size() % 4 != 0) throw std::invalid_argument("base64 length is not a multiple of 4");
  std::vector<std::uint8_t> out;
  out.reserve(text.size() / 4 * 3);
  for (std::size_t i = 0; i < text.size(); i += 4) {
    std::array<int, 4> v{};
    int pad = 0;
    for (int k = 0; k < 4; ++k) {
      const char c = text[i + static_cast<std::size_t>(k)];
      if (c == '=') {
        if (i + 4 != text.size() || k < 2) throw std::invalid_argument("misplaced base64 padding");
        v[static_cast<std::size_t>(k)] = 0;
        ++pad;
        continue;
      }
      if (pad > 0) throw std::invalid_argument("misplaced base64 padding");
      v[static_cast<std::size_t>(k)] = decode_char(c);
      if (v[static_cast<std::size_t>(k)] < 0) throw std::invalid_argument("invalid base64 character");
    }
    const std::uint32_t word = (v[0] << 18) | (v[1] << 12) | (v[2] << 6) | v[3];
    out.push_back(static_cast<std::uint8_t>(word >> 16));
    if (pad < 2) out.push_back(static_cast<std::uint8_t>(word >> 8));
    if (pad < 1) out.push_back(static_cast<std::uint8_t>(word));
  }
  return out;
}

std::string encode_request(std::uint64_t id, const ImageTensor& image) {
  std::vector<std::uint8_t> bytes(image.data.size() * 4);
  for (std::size_t i = 0; i < image.data.size(); ++i) {
    const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(image.data[i]));
    bytes[4 * i] = static_cast<std::uint8_t>(bits);
    bytes[4 * i + 1] = static_cast<std::uint8_t>(bits >> 8);
    bytes[4 * i + 2] = static_cast<std::uint8_t>(bits >> 16);
    bytes[4 * i + 3] = static_cast<std::uint8_t>(bits >> 24);
  }
  json j = {{"id", id},
            {"width", image.width},
            {"height", image.height},
            {"channels", image.channels},
            {"pixels", base64_encode(bytes)}};
  return j.dump();
}

Request decode_request(std::string_view line, std::uint64_t* id_out) {
  json j;
  try {
    j = json::parse(line);
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("malformed request: ") + e.what());
  }
  if (!j.is_object() || !j.contains("id") || !j["id"].is_number_unsigned()) {
    throw std::invalid_argument("request lacks an unsigned id");
  }
  Request req;
  req.id = j["id"].get<std::uint64_t>();
  if (id_out != nullptr) *id_out = req.id;
  if (j.value("ping", false)) {
    req.ping = true;
    return req;
  }
  const int w = j.at("width").get<int>();
  const int h = j.at("height").get<int>();
  const int c = j.at("channels").get<int>();
  if (w <= 0 || h <= 0 || c <= 0) throw std::invalid_argument("non-positive image dimensions");
  const auto bytes = base64_decode(j.at("pixels").get<std::string>());
  const std::size_t count = static_cast<std::size_t>(w) * static_cast<std::size_t>(h) * static_cast<std::size_t>(c);
  if (bytes.size() != count * 4) {
    throw std::invalid_argument("pixel payload holds " + std::to_string(bytes.size() / 4) + " values, expected " +
                                std::to_string(count));
  }
  req.image = ImageTensor(w, h, c);
  for (std::size_t i = 0; i < count; ++i) {
    const std::uint32_t bits = bytes[4 * i] | (bytes[4 * i + 1] << 8) | (bytes[4 * i + 2] << 16) |
                               (static_cast<std::uint32_t>(bytes[4 * i + 3]) << 24);
    req.image.data[i] = std::bit_cast<float>(bits);
  }
  return req;
}

std::string encode_response(std::uint64_t id, std::span<const Detection> dets) {
  json list = json::array();
  for (const Detection& d : dets) {
    json probs = json::array();
    for (double p : d.probs) probs.push_back(f32(p));
    list.push_back({{"x1", f32(d.box.x1)},
                    {"y1", f32(d.box.y1)},
                    {"x2", f32(d.box.x2)},
                    {"y2", f32(d.box.y2)},
                    {"probs", std::move(probs)}});
  }
  return json{{"id", id}, {"detections", std::move(list)}}.dump();
}

std::string encode_error(std::uint64_t id, std::string_view message) {
  return json{{"id", id}, {"error", std::string(message)}}.dump();
}

std::string encode_ping(std::uint64_t id) { return json{{"id", id}, {"ping", true}}.dump(); }

std::string encode_pong(std::uint64_t id, int class_count) {
  return json{{"id", id}, {"pong", true}, {"class_count", class_count}}.dump();
}

namespace {

json parse_reply(std::string_view line, std::uint64_t expected_id) {
  json j;
  try {
    j = json::parse(line);
  } catch (const json::exception& e) {
    throw OracleUnavailable(std::string("malformed bridge reply: ") + e.what());
  }
  if (!j.is_object() || !j.contains("id") || !j["id"].is_number_unsigned() ||
      j["id"].get<std::uint64_t>() != expected_id) {
    throw OracleUnavailable("bridge reply id does not match request " + std::to_string(expected_id));
  }
  if (j.contains("error")) throw OracleUnavailable("bridge error: " + j["error"].dump());
  return j;
}

}  // namespace

std::vector<Detection> decode_response(std::string_view line, std::uint64_t expected_id) {
  const json j = parse_reply(line, expected_id);
  std::vector<Detection> out;
  try {
    for (const json& d : j.at("detections")) {
      Detection det;
      det.box = {f32(d.at("x1").get<double>()), f32(d.at("y1").get<double>()), f32(d.at("x2").get<double>()),
                 f32(d.at("y2").get<double>())};
      for (const json& p : d.at("probs")) det.probs.push_back(f32(p.get<double>()));
      validate(det, 1e-4);
      out.push_back(std::move(det));
    }
  } catch (const json::exception& e) {
    throw OracleUnavailable(std::string("bridge reply has a bad detection list: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw OracleUnavailable(std::string("bridge returned an invalid detection: ") + e.what());
  }
  return out;
}

int decode_pong(std::string_view line, std::uint64_t expected_id) {
  const json j = parse_reply(line, expected_id);
  if (!j.value("pong", false) || !j.contains("class_count")) throw OracleUnavailable("bridge did not answer the ping");
  return j["class_count"].get<int>();
}

namespace {

void write_all(int fd, const std::string& data, bool socket) {
  std::size_t off = 0;
  while (off < data.size()) {
    const ssize_t n = socket ? ::send(fd, data.data() + off, data.size() - off, MSG_NOSIGNAL)
                             : ::write(fd, data.data() + off, data.size() - off);
    if (n < 0) {
      if (errno == EINTR) continue;
      throw OracleUnavailable(std::string("bridge write failed: ") + std::strerror(errno));
    }
    off += static_cast<std::size_t>(n);
  }
}

std::string read_line(int fd, std::string& buffer, std::chrono::milliseconds timeout) {
  const auto deadline = std::chrono::steady_clock::now() + timeout;
  for (;;) {
    const auto nl = buffer.find('\n');
    if (nl != std::string::npos) {
      std::string line = buffer.substr(0, nl);
      buffer.erase(0, nl + 1);
      return line;
    }
    const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - std::chrono::steady_clock::now());
    if (left.count() <= 0) throw OracleUnavailable("bridge timed out");
    pollfd p{fd, POLLIN, 0};
    const int ready = ::poll(&p, 1, static_cast<int>(left.count()));
    if (ready < 0) {
      if (errno == EINTR) continue;
      throw OracleUnavailable(std::string("poll failed: ") + std::strerror(errno));
    }
    if (ready == 0) throw OracleUnavailable("bridge timed out");
    std::array<char, 65536> chunk{};
    const ssize_t n = ::read(fd, chunk.data(), chunk.size());
    if (n < 0) {
      if (errno == EINTR) continue;
      throw OracleUnavailable(std::string("bridge read failed: ") + std::strerror(errno));
    }
    if (n == 0) throw OracleUnavailable("bridge closed the connection");
    buffer.append(chunk.data(), static_cast<std::size_t>(n));
  }
}

}  // namespace

ProcessTransport::ProcessTransport(const std::string& command) {
  int in_pipe[2];
  int out_pipe[2];
  if (::pipe(in_pipe) != 0) throw OracleUnavailable("pipe() failed");
  if (::pipe(out_pipe) != 0) {
    ::close(in_pipe[0]);
    ::close(in_pipe[1]);
    throw OracleUnavailable("pipe() failed");
  }
  // a dead bridge must surface as a write error, not kill the engine
  ::signal(SIGPIPE, SIG_IGN);
  const pid_t pid = ::fork();
  if (pid < 0) throw OracleUnavailable("fork() failed");
  if (pid == 0) {
    ::dup2(in_pipe[0], STDIN_FILENO);
    ::dup2(out_pipe[1], STDOUT_FILENO);
    ::close(in_pipe[0]);
    ::close(in_pipe[1]);
    ::close(out_pipe[0]);
    ::close(out_pipe[1]);
    ::execl("/bin/sh", "sh", "-c", command.c_str(), static_cast<char*>(nullptr));
    ::_exit(127);
  }
  ::close(in_pipe[0]);
  ::close(out_pipe[1]);
  to_child_ = in_pipe[1];
  from_child_ = out_pipe[0];
  pid_ = pid;
}

ProcessTransport::~ProcessTransport() {
  if (to_child_ >= 0) ::close(to_child_);
  if (from_child_ >= 0) ::close(from_child_);
  if (pid_ > 0) {
    int status = 0;
    ::waitpid(pid_, &status, 0);
  }
}

void ProcessTransport::send_line(const std::string& line) { write_all(to_child_, line + "\n", false); }

std::string ProcessTransport::receive_line(std::chrono::milliseconds timeout) {
  return read_line(from_child_, buffer_, timeout);
}

TcpTransport::TcpTransport(const std::string& host, std::uint16_t port) {
  addrinfo hints{};
  hints.ai_family = AF_UNSPEC;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo* res = nullptr;
  const std::string service = std::to_string(port);
  if (::getaddrinfo(host.c_str(), service.c_str(), &hints, &res) != 0) {
    throw OracleUnavailable("cannot resolve " + host);
  }
  for (addrinfo* ai = res; ai != nullptr; ai = ai->ai_next) {
    const int fd = ::socket(ai->ai_family, ai->ai_socktype, ai->ai_protocol);
    if (fd < 0) continue;
    if (::connect(fd, ai->ai_addr, ai->ai_addrlen) == 0) {
      fd_ = fd;
      break;
    }
    ::close(fd);
  }
  ::freeaddrinfo(res);
  if (fd_ < 0) throw OracleUnavailable("cannot connect to " + host + ":" + service);
}

TcpTransport::~TcpTransport() {
  if (fd_ >= 0) ::close(fd_);
}

void TcpTransport::send_line(const std::string& line) { write_all(fd_, line + "\n", true); }

std::string TcpTransport::receive_line(std::chrono::milliseconds timeout) { return read_line(fd_, buffer_, timeout); }

std::unique_ptr<Transport> connect(const std::string& endpoint) {
  if (endpoint.rfind("exec:", 0) == 0) return std::make_unique<ProcessTransport>(endpoint.substr(5));
  if (endpoint.rfind("tcp://", 0) == 0) {
    const std::string rest = endpoint.substr(6);
    const auto colon = rest.rfind(':');
    if (colon == std::string::npos) throw std::invalid_argument("tcp endpoint needs host:port");
    const int port = std::stoi(rest.substr(colon + 1));
    if (port <= 0 || port > 65535) throw std::invalid_argument("tcp port out of range");
    return std::make_unique<TcpTransport>(rest.substr(0, colon), static_cast<std::uint16_t>(port));
  }
  throw std::invalid_argument("endpoint must start with exec: or tcp://");
}

WireDetector::WireDetector(std::unique_ptr<Transport> transport, std::chrono::milliseconds timeout)
    : transport_(std::move(transport)), timeout_(timeout) {
  class_count_ = ping();
}

int WireDetector::ping() const {
  std::lock_guard lock(mutex_);
  const std::uint64_t id = next_id_++;
  transport_->send_line(encode_ping(id));
  return decode_pong(transport_->receive_line(timeout_), id);
}

std::vector<Detection> WireDetector::detect(const ImageTensor& image) const {
  std::lock_guard lock(mutex_);
  const std::uint64_t id = next_id_++;
  transport_->send_line(encode_request(id, image));
  return decode_response(transport_->receive_line(timeout_), id);
}

}  // namespace garsdc::wire
