#pragma once

// Websocket transport for a Session: JSON text frames, one tick loop on a
// single io_context thread. Broadcast never blocks the loop; a client whose
// outbound queue exceeds the limit is disconnected.

#include "beatflow/service.hpp"

#include <atomic>
#include <functional>
#include <memory>
#include <string>

namespace beatflow::service {

struct ServerOptions {
    std::string address = "127.0.0.1";
    int port = 8765;             ///< 0 picks a free port
    int client_queue_limit = 64;
    bool drop_overruns = false;  ///< skip missed deadlines instead of catching up
    long max_ticks = -1;         ///< stop after this many ticks; -1 runs until stop()
};

class Server {
public:
    Server(Session& session, ServerOptions opts, std::function<void(const std::string&)> log = {});
    ~Server();
    Server(const Server&) = delete;
    Server& operator=(const Server&) = delete;

    /// Bound port, valid after construction.
    int port() const;
    /// Blocks until stop() or max_ticks; returns the number of ticks run.
    long run();
    /// Thread-safe.
    void stop();

    std::size_t clients() const;
    long dropped_clients() const;

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

}  // namespace beatflow::service
