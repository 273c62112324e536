#include "clicooper/transport.hpp"

#include <arpa/inet.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cstring>
#include <stdexcept>
#include <thread>

#include "clicooper/checkpoint.hpp"

namespace clicooper::pipeline {

std::vector<uint8_t> frame_message(const ProtocolMessage& msg) {
    std::vector<uint8_t> body;
    io::put_u8(body, static_cast<uint8_t>(msg.kind));
    io::put_u64(body, msg.sequence);
    switch (msg.kind) {
        case MsgKind::Activation:
        case MsgKind::Gradient:
            io::encode_tensor(body, msg.tensor);
            break;
        case MsgKind::PseudoLabels:
            io::put_u32(body, static_cast<uint32_t>(msg.labels.size()));
            for (int32_t v : msg.labels) io::put_u32(body, static_cast<uint32_t>(v));
            break;
        case MsgKind::Control:
            io::put_u32(body, static_cast<uint32_t>(msg.control.code));
            io::put_f64(body, msg.control.value);
            break;
    }
    std::vector<uint8_t> frame;
    io::put_u32(frame, static_cast<uint32_t>(body.size()));
    frame.insert(frame.end(), body.begin(), body.end());
    return frame;
}

ProtocolMessage unframe_message(const std::vector<uint8_t>& frame) {
    io::ByteReader r{frame};
    uint32_t len = r.u32();
    if (len + 4 != frame.size()) throw std::runtime_error("unframe: length prefix mismatch");
    ProtocolMessage msg;
    uint8_t kind = r.u8();
    if (kind > 3) throw std::runtime_error("unframe: unknown message kind");
    msg.kind = static_cast<MsgKind>(kind);
    msg.sequence = r.u64();
    switch (msg.kind) {
        case MsgKind::Activation:
        case MsgKind::Gradient:
            msg.tensor = io::decode_tensor(r);
            break;
        case MsgKind::PseudoLabels: {
            uint32_t n = r.u32();
            msg.labels.resize(n);
            for (uint32_t i = 0; i < n; ++i) msg.labels[i] = static_cast<int32_t>(r.u32());
            break;
        }
        case MsgKind::Control:
            msg.control.code = static_cast<ControlCode>(r.u32());
            msg.control.value = r.f64();
            break;
    }
    r.expect_end();
    return msg;
}

void Transport::send(ProtocolMessage msg) {
    {
        std::lock_guard<std::mutex> lk(mu_);
        msg.sequence = ++next_send_seq_[{msg.from, msg.to}];
        audit_.push_back({msg.from, msg.to, msg.kind});
    }
    dispatch(std::move(msg));
}

void Transport::check_sequence(const ProtocolMessage& msg) {
    std::lock_guard<std::mutex> lk(mu_);
    uint64_t expected = next_recv_seq_[{msg.from, msg.to}] + 1;
    if (msg.sequence != expected)
        throw std::runtime_error("transport: message out of order on link " + std::to_string(msg.from) +
                                 "->" + std::to_string(msg.to) + " (seq " + std::to_string(msg.sequence) +
                                 ", expected " + std::to_string(expected) + ")");
    next_recv_seq_[{msg.from, msg.to}] = msg.sequence;
}

void InprocTransport::dispatch(ProtocolMessage&& msg) {
    queue_.push_back(std::move(msg));
}

void InprocTransport::run(std::span<Role*> roles, const std::function<void()>& kickoff) {
    auto role_by_id = [&](int id) -> Role* {
        for (Role* r : roles)
            if (r->id() == id) return r;
        throw std::runtime_error("transport: no role with id " + std::to_string(id));
    };
    if (kickoff) kickoff();
    while (true) {
        size_t cursor = 0;
        while (cursor < queue_.size()) {
            // Swap out before handling: handlers enqueue new messages.
            ProtocolMessage msg = std::move(queue_[cursor]);
            ++cursor;
            check_sequence(msg);
            role_by_id(msg.to)->handle(msg, *this);
        }
        queue_.clear();
        bool all_done = true;
        for (Role* r : roles) all_done = all_done && r->done();
        if (all_done) return;
        if (queue_.empty())
            throw std::runtime_error("transport: protocol stalled with pending roles");
    }
}

namespace {

void write_all(int fd, const uint8_t* data, size_t len) {
    size_t off = 0;
    while (off < len) {
        ssize_t n = ::write(fd, data + off, len - off);
        if (n <= 0) throw std::runtime_error("tcp: write failed");
        off += static_cast<size_t>(n);
    }
}

void read_all(int fd, uint8_t* data, size_t len) {
    size_t off = 0;
    while (off < len) {
        ssize_t n = ::read(fd, data + off, len - off);
        if (n <= 0) throw std::runtime_error("tcp: connection closed mid-frame");
        off += static_cast<size_t>(n);
    }
}

std::pair<int, int> connected_pair() {
    int listener = ::socket(AF_INET, SOCK_STREAM, 0);
    if (listener < 0) throw std::runtime_error("tcp: socket failed");
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
    addr.sin_port = 0;
    if (::bind(listener, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) < 0 ||
        ::listen(listener, 1) < 0) {
        ::close(listener);
        throw std::runtime_error("tcp: bind/listen failed");
    }
    socklen_t alen = sizeof(addr);
    if (::getsockname(listener, reinterpret_cast<sockaddr*>(&addr), &alen) < 0) {
        ::close(listener);
        throw std::runtime_error("tcp: getsockname failed");
    }
    int client = ::socket(AF_INET, SOCK_STREAM, 0);
    if (client < 0 || ::connect(client, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) < 0) {
        ::close(listener);
        if (client >= 0) ::close(client);
        throw std::runtime_error("tcp: connect failed");
    }
    int server = ::accept(listener, nullptr, nullptr);
    ::close(listener);
    if (server < 0) {
        ::close(client);
        throw std::runtime_error("tcp: accept failed");
    }
    int one = 1;
    ::setsockopt(client, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
    ::setsockopt(server, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
    return {client, server};
}

} // namespace

TcpTransport::TcpTransport(int trainers) {
    if (trainers < 1) throw std::invalid_argument("tcp: need at least one trainer");
    std::vector<std::pair<int, int>> wanted;
    wanted.emplace_back(0, 1);
    if (trainers > 1) wanted.emplace_back(0, trainers);
    for (int i = 1; i < trainers; ++i) {
        wanted.emplace_back(i, i + 1);
        wanted.emplace_back(i + 1, i);
    }
    for (auto link : wanted) {
        auto [w, r] = connected_pair();
        links_[link] = {w, r};
        fd_write_mu_.emplace(w, std::make_unique<std::mutex>());
    }
}

TcpTransport::~TcpTransport() {
    for (auto& [link, fds] : links_) {
        if (fds.write_fd >= 0) ::close(fds.write_fd);
        if (fds.read_fd >= 0) ::close(fds.read_fd);
    }
}

void TcpTransport::dispatch(ProtocolMessage&& msg) {
    auto it = links_.find({msg.from, msg.to});
    if (it == links_.end())
        throw std::runtime_error("tcp: no link " + std::to_string(msg.from) + "->" + std::to_string(msg.to));
    std::vector<uint8_t> frame = frame_message(msg);
    std::lock_guard<std::mutex> lk(*fd_write_mu_.at(it->second.write_fd));
    write_all(it->second.write_fd, frame.data(), frame.size());
}

void TcpTransport::run(std::span<Role*> roles, const std::function<void()>& kickoff) {
    std::vector<std::thread> threads;
    std::vector<std::exception_ptr> errors(roles.size());

    for (size_t ri = 0; ri < roles.size(); ++ri) {
        Role* role = roles[ri];
        threads.emplace_back([this, role, &errors, ri]() {
            try {
                std::vector<int> peers = role->incoming_peers();
                std::vector<pollfd> fds;
                std::vector<int> peer_of_fd;
                for (int p : peers) {
                    auto it = links_.find({p, role->id()});
                    if (it == links_.end()) continue;
                    fds.push_back({it->second.read_fd, POLLIN, 0});
                    peer_of_fd.push_back(p);
                }
                while (!role->done()) {
                    if (fds.empty()) break;
                    int rc = ::poll(fds.data(), fds.size(), 30000);
                    if (rc < 0) throw std::runtime_error("tcp: poll failed");
                    if (rc == 0) throw std::runtime_error("tcp: role " + std::to_string(role->id()) + " timed out");
                    for (size_t fi = 0; fi < fds.size() && !role->done(); ++fi) {
                        if (!(fds[fi].revents & POLLIN)) continue;
                        uint8_t lenb[4];
                        read_all(fds[fi].fd, lenb, 4);
                        uint32_t len = 0;
                        for (int b = 3; b >= 0; --b) len = (len << 8) | lenb[b];
                        std::vector<uint8_t> frame(4 + len);
                        std::memcpy(frame.data(), lenb, 4);
                        read_all(fds[fi].fd, frame.data() + 4, len);
                        ProtocolMessage msg = unframe_message(frame);
                        msg.from = peer_of_fd[fi];
                        msg.to = role->id();
                        check_sequence(msg);
                        role->handle(msg, *this);
                        fds[fi].revents = 0;
                    }
                }
            } catch (...) {
                errors[ri] = std::current_exception();
            }
        });
    }
    std::exception_ptr kickoff_error;
    if (kickoff) {
        try {
            kickoff();
        } catch (...) {
            kickoff_error = std::current_exception();
        }
    }
    for (auto& t : threads) t.join();
    if (kickoff_error) std::rethrow_exception(kickoff_error);
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

} // namespace clicooper::pipeline
