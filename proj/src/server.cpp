#include "beatflow/server.hpp"

#include <boost/asio.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/websocket.hpp>

#include <chrono>
#include <deque>
#include <set>

namespace beatflow::service {

namespace asio = boost::asio;
namespace beast = boost::beast;
namespace websocket = beast::websocket;
using tcp = asio::ip::tcp;
using Clock = std::chrono::steady_clock;

namespace {

class Client;
using ClientPtr = std::shared_ptr<Client>;

struct Hub {
    Session& session;
    ServerOptions opts;
    std::function<void(const std::string&)> log;
    std::set<ClientPtr> clients;
    long dropped = 0;

    void say(const std::string& s) const {
        if (log) log(s);
    }
};

class Client : public std::enable_shared_from_this<Client> {
public:
    Client(tcp::socket s, Hub& hub) : ws_(std::move(s)), hub_(hub) {}

    void start() {
        ws_.set_option(websocket::stream_base::timeout::suggested(beast::role_type::server));
        ws_.async_accept([self = shared_from_this()](beast::error_code ec) {
            if (ec) return self->drop("handshake: " + ec.message());
            self->hub_.clients.insert(self);
            self->send(self->hub_.session.hello().dump());
            self->read();
        });
    }

    /// Queues a frame; drops the client instead of blocking when it lags.
    void send(std::string msg) {
        if (closed_) return;
        if (static_cast<int>(queue_.size()) >= hub_.opts.client_queue_limit) {
            ++hub_.dropped;
            return drop("client lagging, queue limit reached");
        }
        queue_.push_back(std::move(msg));
        if (queue_.size() == 1) write();
    }

    void close() {
        if (closed_) return;
        closed_ = true;
        hub_.clients.erase(shared_from_this());
        beast::error_code ec;
        beast::get_lowest_layer(ws_).cancel(ec);
        beast::get_lowest_layer(ws_).close(ec);
    }

private:
    void drop(const std::string& why) {
        if (closed_) return;
        hub_.say("client disconnected: " + why);
        close();
    }

    void write() {
        ws_.text(true);
        ws_.async_write(asio::buffer(queue_.front()), [self = shared_from_this()](beast::error_code ec, std::size_t) {
            if (ec) return self->drop("write: " + ec.message());
            self->queue_.pop_front();
            if (!self->queue_.empty() && !self->closed_) self->write();
        });
    }

    void read() {
        ws_.async_read(buf_, [self = shared_from_this()](beast::error_code ec, std::size_t) {
            if (ec) return self->drop(ec == websocket::error::closed ? "closed" : "read: " + ec.message());
            const std::string text = beast::buffers_to_string(self->buf_.data());
            self->buf_.consume(self->buf_.size());
            json reply;
            try {
                reply = self->hub_.session.submit(json::parse(text));
            } catch (const json::exception& e) {
                reply = error_frame(std::string("invalid JSON: ") + e.what(), self->hub_.session.ticks_done() - 1, false);
            }
            self->send(reply.dump());
            self->read();
        });
    }

    websocket::stream<tcp::socket> ws_;
    Hub& hub_;
    beast::flat_buffer buf_;
    std::deque<std::string> queue_;
    bool closed_ = false;
};

}  // namespace

struct Server::Impl {
    asio::io_context ioc{1};
    tcp::acceptor acceptor{ioc};
    asio::steady_timer timer{ioc};
    Hub hub;
    Clock::time_point deadline;
    Clock::duration period;
    int bound_port = 0;
    long ticks = 0;
    bool stopping = false;

    Impl(Session& s, ServerOptions o, std::function<void(const std::string&)> log) : hub{s, std::move(o), std::move(log), {}, 0} {
        const tcp::endpoint ep(asio::ip::make_address(hub.opts.address), static_cast<unsigned short>(hub.opts.port));
        acceptor.open(ep.protocol());
        acceptor.set_option(asio::socket_base::reuse_address(true));
        acceptor.bind(ep);
        acceptor.listen();
        bound_port = acceptor.local_endpoint().port();
        period = std::chrono::duration_cast<Clock::duration>(std::chrono::duration<double>(1.0 / s.config().tick_rate));
    }

    void accept() {
        acceptor.async_accept([this](beast::error_code ec, tcp::socket sock) {
            if (stopping) return;
            if (!ec) std::make_shared<Client>(std::move(sock), hub)->start();
            accept();
        });
    }

    void broadcast(const std::string& msg) {
        const std::vector<ClientPtr> snapshot(hub.clients.begin(), hub.clients.end());
        for (const auto& c : snapshot) c->send(msg);
    }

    void schedule() {
        timer.expires_at(deadline);
        timer.async_wait([this](beast::error_code ec) {
            if (ec || stopping) return;
            on_tick();
        });
    }

    void on_tick() {
        try {
            broadcast(hub.session.tick().to_json().dump());
        } catch (const std::exception& e) {
            hub.say(std::string("session terminated: ") + e.what());
            broadcast(error_frame(e.what(), hub.session.ticks_done(), true).dump());
            return shutdown();
        }
        ++ticks;
        if (hub.opts.max_ticks >= 0 && ticks >= hub.opts.max_ticks) return shutdown();
        deadline += period;
        const auto now = Clock::now();
        if (deadline < now && hub.opts.drop_overruns) {
            const auto missed = (now - deadline) / period + 1;
            deadline += missed * period;
        }
        schedule();
    }

    void shutdown() {
        stopping = true;
        beast::error_code ec;
        acceptor.close(ec);
        timer.cancel();
        // Let queued frames drain briefly before closing sockets.
        auto t = std::make_shared<asio::steady_timer>(ioc, std::chrono::milliseconds(50));
        t->async_wait([this, t](beast::error_code) {
            const std::vector<ClientPtr> snapshot(hub.clients.begin(), hub.clients.end());
            for (const auto& c : snapshot) c->close();
            ioc.stop();
        });
    }
};

Server::Server(Session& session, ServerOptions opts, std::function<void(const std::string&)> log)
    : impl_(std::make_unique<Impl>(session, std::move(opts), std::move(log))) {}

Server::~Server() = default;

int Server::port() const { return impl_->bound_port; }

long Server::run() {
    impl_->accept();
    impl_->deadline = Clock::now() + impl_->period;
    impl_->schedule();
    impl_->ioc.run();
    return impl_->ticks;
}

void Server::stop() {
    asio::post(impl_->ioc, [this] {
        if (!impl_->stopping) impl_->shutdown();
    });
}

std::size_t Server::clients() const { return impl_->hub.clients.size(); }
long Server::dropped_clients() const { return impl_->hub.dropped; }

}  // namespace beatflow::service
