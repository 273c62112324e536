#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <span>
#include <string>
#include <vector>

#include "clicooper/tensor.hpp"

namespace clicooper::pipeline {

enum class MsgKind : uint8_t { Activation = 0, Gradient = 1, PseudoLabels = 2, Control = 3 };

enum class ControlCode : uint32_t { EpochLoss = 1, Done = 2 };

struct ControlPayload {
    ControlCode code = ControlCode::Done;
    double value = 0.0;
};

/// One relay message. Role ids: 0 is the data client, 1..n the trainers.
struct ProtocolMessage {
    MsgKind kind = MsgKind::Control;
    int from = 0;
    int to = 0;
    uint64_t sequence = 0; // per-link, strictly increasing, assigned on send
    TensorF64 tensor;              // Activation / Gradient
    std::vector<int32_t> labels;   // PseudoLabels
    ControlPayload control;        // Control
};

// Wire framing: u32 length (bytes after the prefix), u8 kind, u64 sequence,
// payload. Tensor payloads use the checkpoint tensor encoding; label
// payloads are u32 count + i32 values; control is u32 code + f64 value.
std::vector<uint8_t> frame_message(const ProtocolMessage& msg);
ProtocolMessage unframe_message(const std::vector<uint8_t>& frame);

/// A protocol participant written as a message-driven state machine.
class Role {
public:
    explicit Role(int id) : id_(id) {}
    virtual ~Role() = default;
    int id() const { return id_; }
    virtual void handle(const ProtocolMessage& msg, class Transport& net) = 0;
    virtual bool done() const = 0;
    /// Peers this role expects messages from (drives socket polling).
    virtual std::vector<int> incoming_peers() const = 0;

private:
    int id_;
};

struct AuditEntry {
    int from;
    int to;
    MsgKind kind;
};

/// Ordered, reliable, FIFO-per-link delivery. No loss, no reorder within a
/// link; receivers verify the per-link sequence.
class Transport {
public:
    virtual ~Transport() = default;

    void send(ProtocolMessage msg);

    /// Delivers messages to roles until every role reports done. `kickoff`
    /// runs once delivery is live; initial sends belong there so a socket
    /// transport never blocks on an unread link.
    virtual void run(std::span<Role*> roles, const std::function<void()>& kickoff) = 0;
    void run(std::span<Role*> roles) { run(roles, {}); }

    const std::vector<AuditEntry>& audit_log() const { return audit_; }

protected:
    virtual void dispatch(ProtocolMessage&& msg) = 0;

    void check_sequence(const ProtocolMessage& msg);

    std::mutex mu_;
    std::map<std::pair<int, int>, uint64_t> next_send_seq_;
    std::map<std::pair<int, int>, uint64_t> next_recv_seq_;
    std::vector<AuditEntry> audit_;
};

/// Single-threaded deterministic reference transport: one global FIFO,
/// delivered in send order (which preserves per-link order).
class InprocTransport : public Transport {
public:
    using Transport::run;
    void run(std::span<Role*> roles, const std::function<void()>& kickoff) override;

protected:
    void dispatch(ProtocolMessage&& msg) override;

private:
    std::vector<ProtocolMessage> queue_;
};

/// Loopback TCP transport: one connection per directed link, messages
/// byte-framed as above, one thread per role.
class TcpTransport : public Transport {
public:
    /// Opens sockets for the relay links of a chain with `trainers`
    /// trainer roles (links C->T1, C->Tn, and both directions between
    /// adjacent trainers).
    explicit TcpTransport(int trainers);
    ~TcpTransport() override;

    using Transport::run;
    void run(std::span<Role*> roles, const std::function<void()>& kickoff) override;

protected:
    void dispatch(ProtocolMessage&& msg) override;

private:
    struct LinkFds {
        int write_fd = -1;
        int read_fd = -1;
    };
    std::map<std::pair<int, int>, LinkFds> links_;
    std::map<int, std::unique_ptr<std::mutex>> fd_write_mu_;
};

} // namespace clicooper::pipeline
