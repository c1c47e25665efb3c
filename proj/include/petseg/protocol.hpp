#pragma once

#include "petseg/backend.hpp"

#include <json.hpp>

#include <atomic>
#include <chrono>
#include <cstdint>
#include <functional>
#include <memory>
#include <mutex>
#include <span>
#include <string>
#include <thread>
#include <vector>

namespace petseg::wire {

inline constexpr int kVersion = 1;
inline constexpr int kDefaultPort = 7741;
inline constexpr std::chrono::milliseconds kDefaultTimeout{10'000};
/// Upper bound on a frame body; anything larger is treated as a corrupt length prefix.
inline constexpr std::uint64_t kMaxFrameBytes = 1ULL << 30;

/// Frame shorter than its length prefix says, or a prefix that cannot be right.
class LengthError : public ProtocolError {
public:
    using ProtocolError::ProtocolError;
};

class IncompatibleVersionError : public ProtocolError {
public:
    using ProtocolError::ProtocolError;
};

/// Connect, read, or write failure, including deadlines.
class TransportError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// The remote side answered with an "error" frame.
class BackendError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct Frame {
    nlohmann::json header;
    std::vector<std::uint8_t> payload;

    std::string type() const;
};

/// u64 LE length, compact JSON header, 0x0A, payload.
std::vector<std::uint8_t> encode_frame(const Frame& frame);
/// Inverse of encode_frame over a complete byte buffer (prefix included).
Frame decode_frame(std::span<const std::uint8_t> bytes);
/// Splits a frame body (the bytes after the prefix) into header and payload.
Frame decode_body(std::span<const std::uint8_t> body);

Frame hello_frame(const std::string& name = {}, int version = kVersion);
Frame error_frame(const std::string& message);

Frame encode_request(const SegmentRequest& request);
SegmentRequest decode_request(const Frame& frame);
Frame encode_response(const SegmentResponse& response);
/// Rejects dims other than `expected`, non-finite or out-of-range values, and short payloads.
/// An "error" frame is surfaced as BackendError.
SegmentResponse decode_response(const Frame& frame, const Dims& expected);

/// "host:port", ":port", "port", or "unix:/path/to/socket".
struct Endpoint {
    enum class Kind { tcp, unix_socket } kind = Kind::tcp;
    std::string host = "127.0.0.1";
    int port = kDefaultPort;
    std::string path;

    static Endpoint parse(const std::string& text);
    std::string to_string() const;
};

/// Owns a connected stream socket. Every read and write honours the deadline.
class Connection {
public:
    Connection() = default;
    explicit Connection(int fd) : fd_(fd) {}
    Connection(Connection&& other) noexcept : fd_(other.fd_) { other.fd_ = -1; }
    Connection& operator=(Connection&& other) noexcept;
    Connection(const Connection&) = delete;
    Connection& operator=(const Connection&) = delete;
    ~Connection();

    static Connection connect(const Endpoint& endpoint, std::chrono::milliseconds timeout = kDefaultTimeout);

    void send_frame(const Frame& frame, std::chrono::milliseconds timeout = kDefaultTimeout);
    void send_bytes(std::span<const std::uint8_t> bytes, std::chrono::milliseconds timeout = kDefaultTimeout);
    Frame recv_frame(std::chrono::milliseconds timeout = kDefaultTimeout);
    /// Waits up to `timeout` for the peer to send something; false on timeout.
    bool wait_readable(std::chrono::milliseconds timeout);
    bool valid() const noexcept { return fd_ >= 0; }
    void close();

private:
    void read_exact(std::uint8_t* out, std::size_t n, std::chrono::steady_clock::time_point deadline);
    int fd_ = -1;
};

/// Bound, listening socket. Unix socket paths are unlinked on close.
class Listener {
public:
    explicit Listener(const Endpoint& endpoint);
    ~Listener();
    Listener(const Listener&) = delete;
    Listener& operator=(const Listener&) = delete;

    /// Bound endpoint; with port 0 this carries the ephemeral port actually chosen.
    const Endpoint& endpoint() const noexcept { return endpoint_; }
    /// Next connection, or an invalid Connection if none arrives within `timeout`.
    Connection accept(std::chrono::milliseconds timeout);

private:
    Endpoint endpoint_;
    int fd_ = -1;
};

/// Harness side of the protocol: a Backend whose calls go over one connection.
class RemoteBackend final : public Backend {
public:
    explicit RemoteBackend(const Endpoint& endpoint, std::chrono::milliseconds timeout = kDefaultTimeout);
    std::string name() const override { return "remote:" + remote_name_; }
    const std::string& remote_name() const noexcept { return remote_name_; }
    SegmentResponse segment(const SegmentRequest& request) override;

private:
    Connection conn_;
    std::chrono::milliseconds timeout_;
    std::string remote_name_;
};

using BackendFactory = std::function<std::unique_ptr<Backend>()>;

/// Serves a backend over TCP or a Unix socket, one thread and one backend instance per connection.
class Server {
public:
    Server(BackendFactory factory, const Endpoint& endpoint, std::chrono::milliseconds timeout = kDefaultTimeout);
    ~Server();
    Server(const Server&) = delete;
    Server& operator=(const Server&) = delete;

    const Endpoint& endpoint() const noexcept { return listener_.endpoint(); }
    /// Accept loop; returns after stop().
    void run();
    /// Runs the accept loop on a background thread.
    void start();
    void stop();

private:
    void handle(Connection conn);

    BackendFactory factory_;
    Listener listener_;
    std::chrono::milliseconds timeout_;
    std::atomic<bool> stop_{false};
    std::thread acceptor_;
    std::mutex workers_mu_;
    std::vector<std::thread> workers_;
};

}  // namespace petseg::wire
