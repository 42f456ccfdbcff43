#pragma once

// HTTP + WebSocket front end of a TeleopService, all on one port:
//   GET /spec, GET /grasps       read-only JSON
//   ws  /state                   StateMessage stream (one text message each)
//   ws  /command                 console commands in, acks out
//   ws  /keypoints               KeypointFrame JSON in (live input)

#include <craft/teleop.hpp>

#include <memory>
#include <string>

namespace craft::net {

class StartupError : public Error {
public:
    using Error::Error;
};

struct ServerOptions {
    std::string address{"127.0.0.1"};
    unsigned short port{8765};  // 0 picks a free port
};

class TeleopServer {
public:
    // Binds and starts accepting; throws StartupError if the address is
    // unusable.
    TeleopServer(TeleopService& service, ServerOptions opt = {});
    ~TeleopServer();
    TeleopServer(const TeleopServer&) = delete;
    TeleopServer& operator=(const TeleopServer&) = delete;

    unsigned short port() const;
    std::size_t connections() const;
    // Closes the listener and every open connection.
    void stop();

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

}  // namespace craft::net
