#pragma once

#include <chrono>
#include <cstdint>
#include <memory>
#include <mutex>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "garsdc/oracle.hpp"

namespace garsdc::wire {

// Line-delimited JSON, one object per line.
//   request  {"id":N,"width":W,"height":H,"channels":C,"pixels":"<base64 LE float32, image layout>"}
//   response {"id":N,"detections":[{"x1":..,"y1":..,"x2":..,"y2":..,"probs":[..]},..]}
//   error    {"id":N,"error":"message"}
//   ping     {"id":N,"ping":true}  ->  {"id":N,"pong":true,"class_count":C}
// Numbers travel as float32 values; decode(encode(x)) is exact for
// float32-representable inputs.

std::string base64_encode(std::span<const std::uint8_t> bytes);
/// Throws std::invalid_argument on malformed input.
std::vector<std::uint8_t> base64_decode(std::string_view text);

std::string encode_request(std::uint64_t id, const ImageTensor& image);

struct Request {
  std::uint64_t id = 0;
  bool ping = false;
  ImageTensor image;  // empty for pings
};
/// Server-side decoding. Throws std::invalid_argument; `id` in the message,
/// when readable, is reported through `id_out` even on failure.
Request decode_request(std::string_view line, std::uint64_t* id_out = nullptr);

std::string encode_response(std::uint64_t id, std::span<const Detection> dets);
std::string encode_error(std::uint64_t id, std::string_view message);
std::string encode_ping(std::uint64_t id);
std::string encode_pong(std::uint64_t id, int class_count);

/// Client-side decoding. Throws OracleUnavailable on error responses, id
/// mismatch, or detections that break the Detection invariants.
std::vector<Detection> decode_response(std::string_view line, std::uint64_t expected_id);
int decode_pong(std::string_view line, std::uint64_t expected_id);

class Transport {
 public:
  virtual ~Transport() = default;
  virtual void send_line(const std::string& line) = 0;
  /// Throws OracleUnavailable on timeout or a closed stream.
  virtual std::string receive_line(std::chrono::milliseconds timeout) = 0;
};

/// Spawns `/bin/sh -c command` and talks over its stdin/stdout.
class ProcessTransport final : public Transport {
 public:
  explicit ProcessTransport(const std::string& command);
  ~ProcessTransport() override;
  ProcessTransport(const ProcessTransport&) = delete;
  ProcessTransport& operator=(const ProcessTransport&) = delete;

  void send_line(const std::string& line) override;
  std::string receive_line(std::chrono::milliseconds timeout) override;

 private:
  int to_child_ = -1;
  int from_child_ = -1;
  int pid_ = -1;
  std::string buffer_;
};

/// TCP connection to host:port.
class TcpTransport final : public Transport {
 public:
  TcpTransport(const std::string& host, std::uint16_t port);
  ~TcpTransport() override;
  TcpTransport(const TcpTransport&) = delete;
  TcpTransport& operator=(const TcpTransport&) = delete;

  void send_line(const std::string& line) override;
  std::string receive_line(std::chrono::milliseconds timeout) override;

 private:
  int fd_ = -1;
  std::string buffer_;
};

/// "tcp://host:port" or "exec:<shell command>".
std::unique_ptr<Transport> connect(const std::string& endpoint);

/// Detector answered by an external bridge process. Requests are serialized.
class WireDetector final : public Detector {
 public:
  /// Sends a ping to learn the bridge's class count.
  explicit WireDetector(std::unique_ptr<Transport> transport,
                        std::chrono::milliseconds timeout = std::chrono::seconds(30));

  std::vector<Detection> detect(const ImageTensor& image) const override;
  int class_count() const override { return class_count_; }

  int ping() const;

 private:
  std::unique_ptr<Transport> transport_;
  std::chrono::milliseconds timeout_;
  mutable std::mutex mutex_;
  mutable std::uint64_t next_id_ = 1;
  int class_count_ = 0;
};

}  // namespace garsdc::wire
