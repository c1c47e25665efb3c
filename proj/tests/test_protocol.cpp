#include "petseg/interaction.hpp"
#include "petseg/phantom.hpp"
#include "petseg/protocol.hpp"

#include "oracles.hpp"

#include <doctest.h>

#include <filesystem>
#include <future>
#include <thread>

using namespace petseg;
using namespace petseg::wire;
using namespace std::chrono_literals;

namespace {

Endpoint loopback() { return Endpoint::parse("127.0.0.1:0"); }

std::unique_ptr<Backend> make_threshold() { return std::make_unique<ThresholdBackend>(2.0); }

SegmentRequest random_request(std::mt19937_64& rng) {
    SegmentRequest r;
    const Dims d = oracle::random_dims(rng, 1, 9);
    r.patch = Volume<float>(d);
    for (float& x : r.patch) x = std::uniform_real_distribution<float>(-5.0f, 50.0f)(rng);
    if (rng() % 2) {
        r.prior = Volume<float>(d);
        for (float& x : *r.prior) x = std::uniform_real_distribution<float>(0.0f, 1.0f)(rng);
    }
    const int n = static_cast<int>(rng() % 5);
    for (int t = 0; t < n; ++t)
        r.prompts.push_back({Index3(static_cast<int>(rng() % d.nx), static_cast<int>(rng() % d.ny),
                                    static_cast<int>(rng() % d.nz)),
                             rng() % 2 ? Polarity::positive : Polarity::negative, t});
    r.session = "case_" + std::to_string(rng() % 100);
    return r;
}

// Accepts one connection and runs `script` on it in the background.
template <class F>
std::future<void> fake_peer(Listener& l, F script) {
    return std::async(std::launch::async, [&l, script]() mutable {
        Connection c;
        for (int i = 0; i < 50 && !c.valid(); ++i) c = l.accept(100ms);
        if (c.valid()) script(c);
    });
}

}  // namespace

TEST_CASE("payload encoding fixtures") {
    SegmentRequest r;
    r.patch = Volume<float>(Dims::cube(1), 2.5f);
    const Frame f = encode_request(r);
    CHECK(f.payload == std::vector<std::uint8_t>{0x00, 0x00, 0x20, 0x40});

    SegmentRequest r2;
    r2.patch = Volume<float>(Dims{2, 1, 1}, 1.0f);
    r2.prior = Volume<float>(Dims{2, 1, 1}, 0.5f);
    CHECK(encode_request(r2).payload.size() == 16);

    const std::vector<std::uint8_t> bytes = encode_frame(f);
    const std::string header = f.header.dump();
    REQUIRE(bytes.size() == 8 + header.size() + 1 + 4);
    CHECK(bytes[0] == header.size() + 5);
    for (int b = 1; b < 8; ++b) CHECK(bytes[b] == 0);
    CHECK(bytes[8 + header.size()] == 0x0A);
    CHECK(f.header["has_prior"] == false);
    CHECK(f.header["version"] == 1);
}

TEST_CASE("request and response round trips") {
    std::mt19937_64 rng(9);
    for (int t = 0; t < 300; ++t) {
        const SegmentRequest r = random_request(rng);
        const SegmentRequest back = decode_request(decode_frame(encode_frame(encode_request(r))));
        CHECK(back.patch == r.patch);
        CHECK(back.prior == r.prior);
        CHECK(back.prompts == r.prompts);
        CHECK(back.session == r.session);

        SegmentResponse resp{Volume<float>(r.dims()), 1.25, {"w"}};
        for (float& x : resp.prob) x = std::uniform_real_distribution<float>(0.0f, 1.0f)(rng);
        const SegmentResponse rb = decode_response(decode_frame(encode_frame(encode_response(resp))), r.dims());
        CHECK(rb.prob == resp.prob);
        CHECK(rb.warnings == resp.warnings);
        CHECK(rb.latency_ms == 1.25);
    }
}

TEST_CASE("decode_response rejects bad frames") {
    SegmentResponse ok{Volume<float>(Dims::cube(2), 0.5f), 0.0, {}};
    const Dims d = Dims::cube(2);
    CHECK_NOTHROW(decode_response(encode_response(ok), d));
    CHECK_THROWS_AS(decode_response(encode_response(ok), Dims::cube(3)), ProtocolError);

    SegmentResponse high = ok;
    high.prob[1] = 1.5f;
    CHECK_THROWS_AS(decode_response(encode_response(high), d), ProtocolError);
    SegmentResponse nan = ok;
    nan.prob[0] = std::numeric_limits<float>::infinity();
    CHECK_THROWS_AS(decode_response(encode_response(nan), d), ProtocolError);

    Frame shortp = encode_response(ok);
    shortp.payload.pop_back();
    CHECK_THROWS_AS(decode_response(shortp, d), LengthError);

    std::vector<std::uint8_t> bytes = encode_frame(encode_response(ok));
    for (std::size_t cut : {std::size_t{0}, std::size_t{5}, std::size_t{20}, bytes.size() - 1})
        CHECK_THROWS_AS(decode_frame(std::span(bytes).first(cut)), LengthError);

    CHECK_THROWS_AS(decode_response(error_frame("model exploded"), d), BackendError);
    CHECK_THROWS_AS(decode_response(hello_frame(), d), ProtocolError);
    const std::vector<std::uint8_t> junk{'{', 'x', '\n'};
    CHECK_THROWS_AS(decode_body(junk), ProtocolError);
    const std::vector<std::uint8_t> notype{'{', '}', '\n'};
    CHECK_THROWS_AS(decode_body(notype), ProtocolError);
}

TEST_CASE("random byte strings never crash the decoder") {
    std::mt19937_64 rng(17);
    SegmentRequest r;
    r.patch = Volume<float>(Dims{3, 2, 1}, 1.0f);
    const std::vector<std::uint8_t> good = encode_frame(encode_request(r));
    for (int t = 0; t < 2000; ++t) {
        std::vector<std::uint8_t> b = good;
        const int flips = 1 + static_cast<int>(rng() % 4);
        for (int f = 0; f < flips; ++f) b[rng() % b.size()] = static_cast<std::uint8_t>(rng());
        try {
            decode_request(decode_frame(b));
        } catch (const ProtocolError&) {
        }
    }
}

TEST_CASE("endpoint parsing") {
    CHECK(Endpoint::parse("7741").port == 7741);
    CHECK(Endpoint::parse("7741").host == "127.0.0.1");
    const Endpoint e = Endpoint::parse("localhost:9000");
    CHECK(e.host == "localhost");
    CHECK(e.port == 9000);
    const Endpoint u = Endpoint::parse("unix:/tmp/x.sock");
    CHECK(u.kind == Endpoint::Kind::unix_socket);
    CHECK(u.path == "/tmp/x.sock");
    CHECK(u.to_string() == "unix:/tmp/x.sock");
    CHECK_THROWS_AS(Endpoint::parse("host:99999"), TransportError);
    CHECK_THROWS_AS(Endpoint::parse("host:abc"), TransportError);
}

TEST_CASE("served backend answers like the in-process one") {
    Server server(make_threshold, loopback());
    server.start();
    RemoteBackend remote(server.endpoint());
    CHECK(remote.remote_name() == "threshold");
    ThresholdBackend local(2.0);
    std::mt19937_64 rng(4);
    for (int t = 0; t < 50; ++t) {
        const SegmentRequest r = random_request(rng);
        CHECK(remote.segment(r).prob == local.segment(r).prob);
    }
    server.stop();
}

TEST_CASE("version 1 handshake; version 2 reply is rejected") {
    {
        Listener l(loopback());
        auto peer = fake_peer(l, [](Connection& c) {
            const Frame hello = c.recv_frame();
            CHECK(hello.header["version"] == 1);
            c.send_frame(hello_frame("future", 2));
        });
        CHECK_THROWS_AS(RemoteBackend(l.endpoint()), IncompatibleVersionError);
        peer.get();
    }
    {
        Server server(make_threshold, loopback());
        server.start();
        Connection c = Connection::connect(server.endpoint());
        c.send_frame(hello_frame("harness", 2));
        const Frame reply = c.recv_frame();
        CHECK(reply.type() == "error");
        CHECK_THROWS_AS(c.recv_frame(2000ms), TransportError);
        server.stop();
    }
}

TEST_CASE("silent backend times out") {
    Listener l(loopback());
    auto peer = fake_peer(l, [](Connection& c) {
        c.recv_frame();
        std::this_thread::sleep_for(800ms);
    });
    const auto t0 = std::chrono::steady_clock::now();
    CHECK_THROWS_AS(RemoteBackend(l.endpoint(), 200ms), TransportError);
    CHECK(std::chrono::steady_clock::now() - t0 < 700ms);
    peer.get();
}

TEST_CASE("malformed length prefix gets an error frame and a close") {
    Server server(make_threshold, loopback());
    server.start();
    Connection c = Connection::connect(server.endpoint());
    const std::vector<std::uint8_t> bad(8, 0xFF);
    c.send_bytes(bad);
    const Frame reply = c.recv_frame();
    CHECK(reply.type() == "error");
    CHECK_THROWS_AS(c.recv_frame(2000ms), TransportError);

    // Garbage header after a valid hello.
    Connection c2 = Connection::connect(server.endpoint());
    c2.send_frame(hello_frame());
    CHECK(c2.recv_frame().type() == "hello");
    const std::vector<std::uint8_t> garbage{3, 0, 0, 0, 0, 0, 0, 0, 'x', 'y', '\n'};
    c2.send_bytes(garbage);
    CHECK(c2.recv_frame().type() == "error");
    CHECK_THROWS_AS(c2.recv_frame(2000ms), TransportError);
    server.stop();
}

TEST_CASE("backend failure returns an error frame and keeps the connection") {
    class Picky final : public Backend {
    public:
        std::string name() const override { return "picky"; }
        SegmentResponse segment(const SegmentRequest& r) override {
            if (r.session == "bad") throw std::runtime_error("refusing");
            return SegmentResponse{Volume<float>(r.dims(), 0.0f), 0.0, {}};
        }
    };
    Server server([] { return std::make_unique<Picky>(); }, loopback());
    server.start();
    RemoteBackend remote(server.endpoint());
    SegmentRequest r;
    r.patch = Volume<float>(Dims::cube(2), 1.0f);
    r.session = "bad";
    CHECK_THROWS_AS(remote.segment(r), BackendError);
    r.session = "good";
    CHECK_NOTHROW(remote.segment(r));
    server.stop();
}

TEST_CASE("concurrent connections are independent") {
    Server server([] { return std::make_unique<RegionGrowBackend>(); }, loopback());
    server.start();
    std::vector<std::future<bool>> jobs;
    for (int w = 0; w < 4; ++w)
        jobs.push_back(std::async(std::launch::async, [&, w] {
            RemoteBackend remote(server.endpoint());
            RegionGrowBackend local;
            std::mt19937_64 rng(100 + w);
            bool same = true;
            for (int t = 0; t < 30; ++t) {
                SegmentRequest r = random_request(rng);
                r.session = "worker" + std::to_string(w);
                same = same && remote.segment(r).prob == local.segment(r).prob;
            }
            return same;
        }));
    for (auto& j : jobs) CHECK(j.get());
    server.stop();
}

TEST_CASE("unix socket transport and loopback trajectories") {
    const std::string path = (std::filesystem::temp_directory_path() / "petseg_test.sock").string();
    Server server([] { return std::make_unique<RegionGrowBackend>(); }, Endpoint::parse("unix:" + path));
    server.start();
    RemoteBackend remote(server.endpoint());
    RegionGrowBackend local;

    PhantomSpec spec;
    spec.seed = 3;
    spec.dims = Dims::cube(32);
    spec.n_organs = 1;
    spec.n_lesions = 2;
    const Phantom ph = generate(spec);
    const BinaryMask g = ph.labels.select({1, 2, 3});
    const auto a = run_interaction(local, ph.grid, g, 4, PatchConfig::with_edge(16));
    const auto b = run_interaction(remote, ph.grid, g, 4, PatchConfig::with_edge(16));
    REQUIRE(a.states.size() == b.states.size());
    for (std::size_t t = 0; t < a.states.size(); ++t) {
        CHECK(a.states[t].prob == b.states[t].prob);
        CHECK(a.metrics[t].dsc == b.metrics[t].dsc);
    }
    server.stop();
}

TEST_CASE("connecting to nothing is a transport error") {
    std::string path = (std::filesystem::temp_directory_path() / "petseg_nobody.sock").string();
    std::filesystem::remove(path);
    CHECK_THROWS_AS(RemoteBackend(Endpoint::parse("unix:" + path), 500ms), TransportError);
}
