#include "petseg/protocol.hpp"

#include <arpa/inet.h>
#include <fcntl.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <sys/stat.h>
#include <sys/un.h>
#include <unistd.h>

#include <algorithm>
#include <bit>
#include <cerrno>
#include <cmath>
#include <cstring>

namespace petseg::wire {

using nlohmann::json;
using Clock = std::chrono::steady_clock;

namespace {

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
    for (int b = 0; b < 8; ++b) out.push_back(static_cast<std::uint8_t>(v >> (8 * b)));
}

std::uint64_t get_u64(const std::uint8_t* p) {
    std::uint64_t v = 0;
    for (int b = 7; b >= 0; --b) v = (v << 8) | p[b];
    return v;
}

void put_floats(std::vector<std::uint8_t>& out, const Volume<float>& v) {
    out.reserve(out.size() + 4 * v.size());
    for (float f : v) {
        const auto u = std::bit_cast<std::uint32_t>(f);
        for (int b = 0; b < 4; ++b) out.push_back(static_cast<std::uint8_t>(u >> (8 * b)));
    }
}

Volume<float> get_floats(const Dims& dims, const std::uint8_t* p) {
    Volume<float> v(dims);
    for (std::size_t n = 0; n < v.size(); ++n, p += 4) {
        const std::uint32_t u = std::uint32_t{p[0]} | std::uint32_t{p[1]} << 8 | std::uint32_t{p[2]} << 16 |
                                std::uint32_t{p[3]} << 24;
        v[n] = std::bit_cast<float>(u);
    }
    return v;
}

json dims_json(const Dims& d) { return json::array({d.nx, d.ny, d.nz}); }

Dims dims_from(const json& h) {
    const json& d = h.at("dims");
    if (!d.is_array() || d.size() != 3) throw ProtocolError("dims must be a 3-element array");
    Dims out{d[0].get<int>(), d[1].get<int>(), d[2].get<int>()};
    if (out.nx < 1 || out.ny < 1 || out.nz < 1) throw ProtocolError("dims must be positive");
    if (out.count() > kMaxFrameBytes / 4) throw ProtocolError("dims too large");
    return out;
}

void require_type(const Frame& f, const char* type) {
    if (f.type() != type) throw ProtocolError("expected a " + std::string(type) + " frame, got '" + f.type() + "'");
}

std::string errno_text(const char* what) { return std::string(what) + ": " + std::strerror(errno); }

int remaining_ms(Clock::time_point deadline) {
    const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - Clock::now()).count();
    return static_cast<int>(std::clamp<long long>(left, 0, 1 << 30));
}

// Waits for `events` on fd until the deadline; false on timeout.
bool wait_for(int fd, short events, Clock::time_point deadline) {
    for (;;) {
        pollfd p{fd, events, 0};
        const int r = ::poll(&p, 1, remaining_ms(deadline));
        if (r > 0) return true;
        if (r == 0) return false;
        if (errno != EINTR) throw TransportError(errno_text("poll"));
    }
}

void set_nonblocking(int fd) {
    const int flags = ::fcntl(fd, F_GETFL, 0);
    if (flags < 0 || ::fcntl(fd, F_SETFL, flags | O_NONBLOCK) < 0) throw TransportError(errno_text("fcntl"));
}

sockaddr_un unix_address(const std::string& path) {
    sockaddr_un addr{};
    addr.sun_family = AF_UNIX;
    if (path.empty() || path.size() >= sizeof addr.sun_path) throw TransportError("bad unix socket path '" + path + "'");
    std::memcpy(addr.sun_path, path.c_str(), path.size() + 1);
    return addr;
}

struct AddrInfo {
    addrinfo* list = nullptr;
    ~AddrInfo() {
        if (list) ::freeaddrinfo(list);
    }
};

void resolve(const Endpoint& ep, bool passive, AddrInfo& out) {
    addrinfo hints{};
    hints.ai_family = AF_UNSPEC;
    hints.ai_socktype = SOCK_STREAM;
    if (passive) hints.ai_flags = AI_PASSIVE;
    const std::string port = std::to_string(ep.port);
    const int rc = ::getaddrinfo(ep.host.empty() ? nullptr : ep.host.c_str(), port.c_str(), &hints, &out.list);
    if (rc != 0) throw TransportError("cannot resolve " + ep.to_string() + ": " + ::gai_strerror(rc));
}

}  // namespace

std::string Frame::type() const {
    if (!header.is_object() || !header.contains("type") || !header["type"].is_string()) return {};
    return header["type"].get<std::string>();
}

std::vector<std::uint8_t> encode_frame(const Frame& frame) {
    const std::string h = frame.header.dump(-1, ' ', false, json::error_handler_t::replace);
    std::vector<std::uint8_t> out;
    out.reserve(8 + h.size() + 1 + frame.payload.size());
    put_u64(out, h.size() + 1 + frame.payload.size());
    out.insert(out.end(), h.begin(), h.end());
    out.push_back(0x0A);
    out.insert(out.end(), frame.payload.begin(), frame.payload.end());
    return out;
}

Frame decode_body(std::span<const std::uint8_t> body) {
    const auto sep = std::find(body.begin(), body.end(), std::uint8_t{0x0A});
    if (sep == body.end()) throw ProtocolError("frame has no header separator");
    Frame f;
    try {
        f.header = json::parse(body.begin(), sep);
    } catch (const json::exception& e) {
        throw ProtocolError("frame header is not valid JSON: " + std::string(e.what()));
    }
    if (f.type().empty()) throw ProtocolError("frame header must be an object with a string \"type\"");
    f.payload.assign(sep + 1, body.end());
    return f;
}

Frame decode_frame(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < 8) throw LengthError("frame shorter than its length prefix");
    const std::uint64_t len = get_u64(bytes.data());
    if (len == 0 || len > kMaxFrameBytes) throw LengthError("frame length prefix " + std::to_string(len) + " out of range");
    if (bytes.size() - 8 < len)
        throw LengthError("truncated frame: prefix says " + std::to_string(len) + " bytes, got " +
                          std::to_string(bytes.size() - 8));
    if (bytes.size() - 8 > len) throw LengthError("trailing bytes after frame");
    return decode_body(bytes.subspan(8, len));
}

Frame hello_frame(const std::string& name, int version) {
    Frame f{{{"type", "hello"}, {"version", version}}, {}};
    if (!name.empty()) f.header["name"] = name;
    return f;
}

Frame error_frame(const std::string& message) {
    return Frame{{{"type", "error"}, {"version", kVersion}, {"message", message}}, {}};
}

Frame encode_request(const SegmentRequest& req) {
    req.validate();
    json prompts = json::array();
    for (const LocalPrompt& p : req.prompts)
        prompts.push_back({{"index", {p.index.x(), p.index.y(), p.index.z()}},
                           {"polarity", std::string(to_string(p.polarity))},
                           {"t", p.iteration}});
    Frame f{{{"type", "segment_request"},
             {"version", kVersion},
             {"dims", dims_json(req.dims())},
             {"prompts", std::move(prompts)},
             {"has_prior", req.prior.has_value()},
             {"session", req.session}},
            {}};
    put_floats(f.payload, req.patch);
    if (req.prior) put_floats(f.payload, *req.prior);
    return f;
}

SegmentRequest decode_request(const Frame& f) {
    require_type(f, "segment_request");
    SegmentRequest req;
    try {
        const Dims d = dims_from(f.header);
        const bool has_prior = f.header.at("has_prior").get<bool>();
        const std::size_t want = 4 * d.count() * (has_prior ? 2 : 1);
        if (f.payload.size() != want)
            throw LengthError("request payload is " + std::to_string(f.payload.size()) + " bytes, expected " +
                              std::to_string(want));
        req.patch = get_floats(d, f.payload.data());
        if (has_prior) req.prior = get_floats(d, f.payload.data() + 4 * d.count());
        if (f.header.contains("session")) req.session = f.header.at("session").get<std::string>();
        for (const json& p : f.header.at("prompts")) {
            const json& idx = p.at("index");
            if (!idx.is_array() || idx.size() != 3) throw ProtocolError("prompt index must be a 3-element array");
            LocalPrompt lp;
            lp.index = Index3(idx[0].get<int>(), idx[1].get<int>(), idx[2].get<int>());
            lp.polarity = parse_polarity(p.at("polarity").get<std::string>());
            lp.iteration = p.value("t", 0);
            req.prompts.push_back(lp);
        }
    } catch (const json::exception& e) {
        throw ProtocolError("malformed segment_request header: " + std::string(e.what()));
    } catch (const DomainError& e) {
        throw ProtocolError(e.what());
    }
    req.validate();
    return req;
}

Frame encode_response(const SegmentResponse& resp) {
    Frame f{{{"type", "segment_response"},
             {"version", kVersion},
             {"dims", dims_json(resp.prob.dims())},
             {"latency_ms", resp.latency_ms},
             {"warnings", resp.warnings}},
            {}};
    put_floats(f.payload, resp.prob);
    return f;
}

SegmentResponse decode_response(const Frame& f, const Dims& expected) {
    if (f.type() == "error") throw BackendError("backend error: " + f.header.value("message", std::string("(no message)")));
    require_type(f, "segment_response");
    SegmentResponse resp;
    try {
        const Dims d = dims_from(f.header);
        if (!(d == expected))
            throw ProtocolError("response dims " + petseg::to_string(d) + " do not match request dims " +
                                petseg::to_string(expected));
        if (f.payload.size() != 4 * d.count())
            throw LengthError("response payload is " + std::to_string(f.payload.size()) + " bytes, expected " +
                              std::to_string(4 * d.count()));
        resp.prob = get_floats(d, f.payload.data());
        resp.latency_ms = f.header.value("latency_ms", 0.0);
        if (f.header.contains("warnings")) resp.warnings = f.header.at("warnings").get<std::vector<std::string>>();
    } catch (const json::exception& e) {
        throw ProtocolError("malformed segment_response header: " + std::string(e.what()));
    }
    resp.validate(expected);
    return resp;
}

Endpoint Endpoint::parse(const std::string& text) {
    Endpoint ep;
    if (text.rfind("unix:", 0) == 0) {
        ep.kind = Kind::unix_socket;
        ep.path = text.substr(5);
        if (ep.path.empty()) throw TransportError("empty unix socket path");
        return ep;
    }
    const auto colon = text.rfind(':');
    std::string port = text;
    if (colon != std::string::npos) {
        if (colon > 0) ep.host = text.substr(0, colon);
        port = text.substr(colon + 1);
    }
    if (port.empty() || port.size() > 5 || !std::all_of(port.begin(), port.end(), ::isdigit) || std::stoi(port) > 65535)
        throw TransportError("bad endpoint '" + text + "' (expected host:port, port, or unix:/path)");
    ep.port = std::stoi(port);
    return ep;
}

std::string Endpoint::to_string() const {
    return kind == Kind::unix_socket ? "unix:" + path : host + ":" + std::to_string(port);
}

Connection& Connection::operator=(Connection&& other) noexcept {
    if (this != &other) {
        close();
        fd_ = other.fd_;
        other.fd_ = -1;
    }
    return *this;
}

Connection::~Connection() { close(); }

void Connection::close() {
    if (fd_ >= 0) ::close(fd_);
    fd_ = -1;
}

Connection Connection::connect(const Endpoint& ep, std::chrono::milliseconds timeout) {
    const auto deadline = Clock::now() + timeout;
    auto attempt = [&](int family, const sockaddr* addr, socklen_t len) -> Connection {
        Connection c(::socket(family, SOCK_STREAM | SOCK_CLOEXEC, 0));
        if (!c.valid()) throw TransportError(errno_text("socket"));
        set_nonblocking(c.fd_);
        if (::connect(c.fd_, addr, len) != 0) {
            if (errno != EINPROGRESS && errno != EAGAIN) throw TransportError(errno_text("connect"));
            if (!wait_for(c.fd_, POLLOUT, deadline)) throw TransportError("connect timed out");
            int err = 0;
            socklen_t el = sizeof err;
            ::getsockopt(c.fd_, SOL_SOCKET, SO_ERROR, &err, &el);
            if (err != 0) throw TransportError("connect: " + std::string(std::strerror(err)));
        }
        if (family != AF_UNIX) {
            int one = 1;
            ::setsockopt(c.fd_, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
        }
        return c;
    };

    try {
        if (ep.kind == Endpoint::Kind::unix_socket) {
            const sockaddr_un addr = unix_address(ep.path);
            return attempt(AF_UNIX, reinterpret_cast<const sockaddr*>(&addr), sizeof addr);
        }
        AddrInfo ai;
        resolve(ep, false, ai);
        std::string last = "no addresses";
        for (addrinfo* a = ai.list; a; a = a->ai_next) {
            try {
                return attempt(a->ai_family, a->ai_addr, a->ai_addrlen);
            } catch (const TransportError& e) {
                last = e.what();
            }
        }
        throw TransportError(last);
    } catch (const TransportError& e) {
        throw TransportError("cannot connect to " + ep.to_string() + ": " + e.what());
    }
}

void Connection::send_bytes(std::span<const std::uint8_t> bytes, std::chrono::milliseconds timeout) {
    if (!valid()) throw TransportError("send on a closed connection");
    const auto deadline = Clock::now() + timeout;
    std::size_t sent = 0;
    while (sent < bytes.size()) {
        if (!wait_for(fd_, POLLOUT, deadline)) throw TransportError("send timed out");
        const ssize_t n = ::send(fd_, bytes.data() + sent, bytes.size() - sent, MSG_NOSIGNAL);
        if (n > 0) {
            sent += static_cast<std::size_t>(n);
        } else if (n < 0 && errno != EAGAIN && errno != EWOULDBLOCK && errno != EINTR) {
            throw TransportError(errno_text("send"));
        }
    }
}

void Connection::send_frame(const Frame& frame, std::chrono::milliseconds timeout) {
    const std::vector<std::uint8_t> bytes = encode_frame(frame);
    send_bytes(bytes, timeout);
}

void Connection::read_exact(std::uint8_t* out, std::size_t n, Clock::time_point deadline) {
    std::size_t got = 0;
    while (got < n) {
        if (!wait_for(fd_, POLLIN, deadline)) throw TransportError("read timed out");
        const ssize_t r = ::recv(fd_, out + got, n - got, 0);
        if (r > 0) {
            got += static_cast<std::size_t>(r);
        } else if (r == 0) {
            throw TransportError("connection closed by peer");
        } else if (errno != EAGAIN && errno != EWOULDBLOCK && errno != EINTR) {
            throw TransportError(errno_text("recv"));
        }
    }
}

Frame Connection::recv_frame(std::chrono::milliseconds timeout) {
    if (!valid()) throw TransportError("receive on a closed connection");
    const auto deadline = Clock::now() + timeout;
    std::uint8_t prefix[8];
    read_exact(prefix, 8, deadline);
    const std::uint64_t len = get_u64(prefix);
    if (len == 0 || len > kMaxFrameBytes) throw LengthError("frame length prefix " + std::to_string(len) + " out of range");
    std::vector<std::uint8_t> body(static_cast<std::size_t>(len));
    read_exact(body.data(), body.size(), deadline);
    return decode_body(body);
}

bool Connection::wait_readable(std::chrono::milliseconds timeout) {
    if (!valid()) return false;
    return wait_for(fd_, POLLIN, Clock::now() + timeout);
}

Listener::Listener(const Endpoint& ep) : endpoint_(ep) {
    if (ep.kind == Endpoint::Kind::unix_socket) {
        const sockaddr_un addr = unix_address(ep.path);
        struct stat st{};
        if (::stat(ep.path.c_str(), &st) == 0 && S_ISSOCK(st.st_mode)) ::unlink(ep.path.c_str());
        fd_ = ::socket(AF_UNIX, SOCK_STREAM | SOCK_CLOEXEC, 0);
        if (fd_ < 0) throw TransportError(errno_text("socket"));
        if (::bind(fd_, reinterpret_cast<const sockaddr*>(&addr), sizeof addr) != 0) {
            const std::string msg = errno_text("bind");
            ::close(fd_);
            throw TransportError("cannot listen on " + ep.to_string() + ": " + msg);
        }
    } else {
        AddrInfo ai;
        resolve(ep, true, ai);
        std::string last = "no addresses";
        for (addrinfo* a = ai.list; a && fd_ < 0; a = a->ai_next) {
            const int fd = ::socket(a->ai_family, SOCK_STREAM | SOCK_CLOEXEC, 0);
            if (fd < 0) continue;
            int one = 1;
            ::setsockopt(fd, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
            if (::bind(fd, a->ai_addr, a->ai_addrlen) == 0) {
                fd_ = fd;
            } else {
                last = errno_text("bind");
                ::close(fd);
            }
        }
        if (fd_ < 0) throw TransportError("cannot listen on " + ep.to_string() + ": " + last);
        sockaddr_storage bound{};
        socklen_t len = sizeof bound;
        ::getsockname(fd_, reinterpret_cast<sockaddr*>(&bound), &len);
        endpoint_.port = bound.ss_family == AF_INET6 ? ntohs(reinterpret_cast<sockaddr_in6*>(&bound)->sin6_port)
                                                     : ntohs(reinterpret_cast<sockaddr_in*>(&bound)->sin_port);
    }
    if (::listen(fd_, 64) != 0) {
        const std::string msg = errno_text("listen");
        ::close(fd_);
        throw TransportError(msg);
    }
    set_nonblocking(fd_);
}

Listener::~Listener() {
    if (fd_ >= 0) ::close(fd_);
    if (endpoint_.kind == Endpoint::Kind::unix_socket) ::unlink(endpoint_.path.c_str());
}

Connection Listener::accept(std::chrono::milliseconds timeout) {
    if (!wait_for(fd_, POLLIN, Clock::now() + timeout)) return Connection();
    const int fd = ::accept4(fd_, nullptr, nullptr, SOCK_CLOEXEC | SOCK_NONBLOCK);
    if (fd < 0) {
        if (errno == EAGAIN || errno == EWOULDBLOCK || errno == EINTR || errno == ECONNABORTED) return Connection();
        throw TransportError(errno_text("accept"));
    }
    if (endpoint_.kind == Endpoint::Kind::tcp) {
        int one = 1;
        ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
    }
    return Connection(fd);
}

RemoteBackend::RemoteBackend(const Endpoint& endpoint, std::chrono::milliseconds timeout)
    : conn_(Connection::connect(endpoint, timeout)), timeout_(timeout) {
    conn_.send_frame(hello_frame(), timeout_);
    const Frame reply = conn_.recv_frame(timeout_);
    if (reply.type() == "error") {
        conn_.close();
        throw IncompatibleVersionError("backend refused handshake: " + reply.header.value("message", std::string()));
    }
    require_type(reply, "hello");
    const int version = reply.header.value("version", -1);
    if (version != kVersion) {
        conn_.close();
        throw IncompatibleVersionError("backend speaks protocol version " + std::to_string(version) + ", need " +
                                       std::to_string(kVersion));
    }
    remote_name_ = reply.header.value("name", std::string("unnamed"));
}

SegmentResponse RemoteBackend::segment(const SegmentRequest& request) {
    const auto t0 = Clock::now();
    Frame reply;
    try {
        conn_.send_frame(encode_request(request), timeout_);
        reply = conn_.recv_frame(timeout_);
    } catch (const std::runtime_error&) {
        conn_.close();  // a late or partial reply would desynchronise every later request
        throw;
    }
    SegmentResponse resp = decode_response(reply, request.dims());
    resp.latency_ms = std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
    return resp;
}

Server::Server(BackendFactory factory, const Endpoint& endpoint, std::chrono::milliseconds timeout)
    : factory_(std::move(factory)), listener_(endpoint), timeout_(timeout) {}

Server::~Server() { stop(); }

void Server::start() { acceptor_ = std::thread([this] { run(); }); }

void Server::run() {
    while (!stop_.load()) {
        Connection c = listener_.accept(std::chrono::milliseconds(100));
        if (!c.valid()) continue;
        std::lock_guard<std::mutex> lock(workers_mu_);
        workers_.emplace_back([this, conn = std::move(c)]() mutable { handle(std::move(conn)); });
    }
}

void Server::stop() {
    stop_.store(true);
    if (acceptor_.joinable()) acceptor_.join();
    std::vector<std::thread> workers;
    {
        std::lock_guard<std::mutex> lock(workers_mu_);
        workers.swap(workers_);
    }
    for (std::thread& t : workers)
        if (t.joinable()) t.join();
}

void Server::handle(Connection conn) {
    std::unique_ptr<Backend> backend;
    bool greeted = false;
    auto refuse = [&](const std::string& msg) {
        try {
            conn.send_frame(error_frame(msg), timeout_);
        } catch (const TransportError&) {
        }
        conn.close();
    };
    while (!stop_.load() && conn.valid()) {
        if (!conn.wait_readable(std::chrono::milliseconds(100))) continue;
        Frame in;
        try {
            in = conn.recv_frame(timeout_);
        } catch (const ProtocolError& e) {
            return refuse(std::string("malformed frame: ") + e.what());
        } catch (const TransportError&) {
            return;  // peer went away or stalled mid-frame
        }

        const std::string type = in.type();
        if (!greeted) {
            if (type != "hello") return refuse("expected hello, got '" + type + "'");
            const int version = in.header.value("version", -1);
            if (version != kVersion)
                return refuse("incompatible protocol version " + std::to_string(version) + ", server speaks " +
                              std::to_string(kVersion));
            try {
                backend = factory_();
                conn.send_frame(hello_frame(backend->name()), timeout_);
            } catch (const std::exception& e) {
                return refuse(std::string("backend unavailable: ") + e.what());
            }
            greeted = true;
            continue;
        }
        if (type != "segment_request") return refuse("unexpected '" + type + "' frame");

        SegmentRequest req;
        try {
            req = decode_request(in);
        } catch (const ProtocolError& e) {
            return refuse(std::string("malformed request: ") + e.what());
        }
        Frame out;
        try {
            const auto t0 = Clock::now();
            SegmentResponse resp = backend->segment(req);
            resp.latency_ms = std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
            resp.validate(req.dims());
            out = encode_response(resp);
        } catch (const std::exception& e) {
            out = error_frame(e.what());
        }
        try {
            conn.send_frame(out, timeout_);
        } catch (const TransportError&) {
            return;
        }
    }
}

}  // namespace petseg::wire
