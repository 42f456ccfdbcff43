#include <craft/teleop_net.hpp>

#include <boost/asio/ip/tcp.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/http.hpp>
#include <boost/beast/websocket.hpp>

#include <list>
#include <sys/socket.h>

namespace craft::net {

namespace asio = boost::asio;
namespace beast = boost::beast;
namespace http = beast::http;
namespace websocket = beast::websocket;
using tcp = asio::ip::tcp;

namespace {

constexpr auto kAckTimeout = std::chrono::seconds(5);
constexpr auto kPoll = std::chrono::milliseconds(100);

http::response<http::string_body> json_response(const http::request<http::string_body>& req, http::status status,
                                                const json& body) {
    http::response<http::string_body> res{status, req.version()};
    res.set(http::field::content_type, "application/json");
    res.set(http::field::access_control_allow_origin, "*");
    res.keep_alive(req.keep_alive());
    res.body() = body.dump();
    res.prepare_payload();
    return res;
}

std::string path_of(beast::string_view target) {
    const std::string t(target);
    return t.substr(0, t.find('?'));
}

json error_json(const std::string& msg) { return {{"type", "error"}, {"error", msg}}; }

}  // namespace

struct TeleopServer::Impl {
    TeleopService& service;
    asio::io_context ioc;
    tcp::acceptor acceptor{ioc};
    std::thread accept_thread;
    std::atomic<bool> stopping{false};
    unsigned short bound_port{0};

    struct Conn {
        std::thread thread;
        int fd{-1};
        std::atomic<bool> done{false};
    };
    mutable std::mutex mu;
    std::list<Conn> conns;

    Impl(TeleopService& s, const ServerOptions& opt) : service(s) {
        beast::error_code ec;
        const auto addr = asio::ip::make_address(opt.address, ec);
        if (ec) throw StartupError("bad bind address '" + opt.address + "': " + ec.message());
        const tcp::endpoint ep{addr, opt.port};
        acceptor.open(ep.protocol(), ec);
        if (!ec) acceptor.set_option(asio::socket_base::reuse_address(true), ec);
        if (!ec) acceptor.bind(ep, ec);
        if (!ec) acceptor.listen(asio::socket_base::max_listen_connections, ec);
        if (ec)
            throw StartupError("cannot listen on " + opt.address + ":" + std::to_string(opt.port) + ": " +
                               ec.message());
        bound_port = acceptor.local_endpoint().port();
        accept_thread = std::thread([this] { accept_loop(); });
    }

    void accept_loop() {
        while (!stopping) {
            beast::error_code ec;
            tcp::socket sock(ioc);
            acceptor.accept(sock, ec);
            if (stopping) break;
            if (ec) continue;
            std::lock_guard lock(mu);
            reap_locked();
            auto& c = conns.emplace_back();
            c.fd = sock.native_handle();
            c.thread = std::thread([this, &c, s = std::move(sock)]() mutable {
                try {
                    serve(std::move(s));
                } catch (const std::exception&) {
                    // connection-level failures only end that connection
                }
                c.done = true;
            });
        }
    }

    void reap_locked() {
        for (auto it = conns.begin(); it != conns.end();) {
            if (it->done) {
                it->thread.join();
                it = conns.erase(it);
            } else {
                ++it;
            }
        }
    }

    void serve(tcp::socket sock) {
        beast::flat_buffer buf;
        for (;;) {
            http::request<http::string_body> req;
            beast::error_code ec;
            http::read(sock, buf, req, ec);
            if (ec) return;
            if (websocket::is_upgrade(req)) {
                websocket::stream<tcp::socket> ws(std::move(sock));
                ws.accept(req);
                const auto path = path_of(req.target());
                if (path == "/state") stream_state(ws);
                else if (path == "/command") command_channel(ws);
                else if (path == "/keypoints") keypoint_channel(ws);
                else ws.close({websocket::close_code::policy_error, "unknown endpoint"});
                return;
            }
            http::write(sock, handle(req), ec);
            if (ec || !req.keep_alive()) return;
        }
    }

    http::response<http::string_body> handle(const http::request<http::string_body>& req) {
        const auto path = path_of(req.target());
        if (req.method() != http::verb::get)
            return json_response(req, http::status::method_not_allowed, error_json("only GET is served"));
        if (path == "/spec") return json_response(req, http::status::ok, service.spec_json());
        if (path == "/grasps") return json_response(req, http::status::ok, service.grasps_json());
        return json_response(req, http::status::not_found, error_json("no such endpoint: " + path));
    }

    void stream_state(websocket::stream<tcp::socket>& ws) {
        auto sub = service.fanout().subscribe();
        ws.text(true);
        try {
            while (!stopping) {
                auto msg = sub->pop_for(kPoll);
                if (!msg) {
                    if (sub->closed()) break;
                    continue;
                }
                ws.write(asio::buffer(*msg));
            }
        } catch (const std::exception&) {
        }
        service.fanout().unsubscribe(sub);
        beast::error_code ec;
        ws.close(websocket::close_code::normal, ec);
    }

    void command_channel(websocket::stream<tcp::socket>& ws) {
        ws.text(true);
        for (;;) {
            beast::flat_buffer buf;
            beast::error_code ec;
            ws.read(buf, ec);
            if (ec) return;
            json reply;
            try {
                const auto msg = json::parse(beast::buffers_to_string(buf.data()));
                auto fut = service.submit(msg);
                if (fut.wait_for(kAckTimeout) != std::future_status::ready)
                    reply = {{"type", "ack"}, {"id", msg.value("id", json())}, {"ok", false}, {"error", "ack timeout"}};
                else
                    reply = fut.get();
            } catch (const json::exception& e) {
                reply = {{"type", "ack"}, {"id", nullptr}, {"ok", false}, {"error", std::string("bad json: ") + e.what()}};
            } catch (const std::future_error&) {
                reply = {{"type", "ack"}, {"id", nullptr}, {"ok", false}, {"error", "command dropped: queue full"}};
            }
            ws.write(asio::buffer(reply.dump()), ec);
            if (ec) return;
        }
    }

    void keypoint_channel(websocket::stream<tcp::socket>& ws) {
        ws.text(true);
        for (;;) {
            beast::flat_buffer buf;
            beast::error_code ec;
            ws.read(buf, ec);
            if (ec) return;
            std::string err;
            try {
                service.post_keypoints(io::frame_from_json(json::parse(beast::buffers_to_string(buf.data()))));
            } catch (const json::exception& e) {
                err = std::string("bad keypoint frame: ") + e.what();
            } catch (const Error& e) {
                err = e.what();
            }
            if (!err.empty()) {
                ws.write(asio::buffer(error_json(err).dump()), ec);
                if (ec) return;
            }
        }
    }

    void stop() {
        if (stopping.exchange(true)) return;
        beast::error_code ec;
        // Unblocks accept() and every blocking read or write.
        ::shutdown(acceptor.native_handle(), SHUT_RDWR);
        acceptor.close(ec);
        if (accept_thread.joinable()) accept_thread.join();
        std::lock_guard lock(mu);
        for (auto& c : conns)
            if (!c.done) ::shutdown(c.fd, SHUT_RDWR);
        for (auto& c : conns) c.thread.join();
        conns.clear();
    }
};

TeleopServer::TeleopServer(TeleopService& service, ServerOptions opt)
    : impl_(std::make_unique<Impl>(service, opt)) {}

TeleopServer::~TeleopServer() { stop(); }

unsigned short TeleopServer::port() const { return impl_->bound_port; }

std::size_t TeleopServer::connections() const {
    std::lock_guard lock(impl_->mu);
    std::size_t n = 0;
    for (const auto& c : impl_->conns) n += !c.done;
    return n;
}

void TeleopServer::stop() {
    if (impl_) impl_->stop();
}

}  // namespace craft::net
