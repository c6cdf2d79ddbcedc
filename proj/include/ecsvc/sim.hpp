#pragma once

// Deterministic discrete-event simulation of the exchange over a CAN-FD bus:
// single shared medium with identifier arbitration, fragmentation, per-node
// compute serialization driven by the cost model, and a time-ordered trace.

#include <chrono>
#include <functional>
#include <queue>

#include "ecsvc/canfd.hpp"
#include "ecsvc/harness.hpp"

namespace ecsvc {

enum class AttackKind { None, ReplayDup, TamperBit };

struct Scenario {
    GroupParams params;
    std::size_t n_attrs = 0;
    BusConfig bus;
    CostModel costs = CostModel::reference();
    NodeClass sa_class = NodeClass::Sa1400MHz;
    bool live_costs = false;  // measure wall-clock handler time instead of tables

    std::uint16_t sa_id = 1;
    std::vector<FleetSpec::Sender> senders;
    std::vector<FleetSpec::Receiver> receivers;

    Bytes epoch = be64(1);
    double ack_window_s = 0.05;  // close the ack window this long after the last activity
    AttackKind attack = AttackKind::None;

    FleetSpec fleet_spec(std::uint64_t seed) const {
        FleetSpec fs;
        fs.params = params;
        fs.n_attrs = n_attrs;
        fs.sa_id = sa_id;
        fs.senders = senders;
        fs.receivers = receivers;
        fs.seed = seed;
        return fs;
    }
};

enum class EventKind { ComputeStart, ComputeEnd, TxStart, TxEnd, Rx, Abort };

inline const char* event_kind_name(EventKind k) {
    switch (k) {
        case EventKind::ComputeStart: return "compute-start";
        case EventKind::ComputeEnd: return "compute-end";
        case EventKind::TxStart: return "tx-start";
        case EventKind::TxEnd: return "tx-end";
        case EventKind::Rx: return "rx";
        case EventKind::Abort: return "abort";
    }
    return "?";
}

struct SimEvent {
    double time_s;
    std::string node;
    EventKind kind;
    std::string detail;
};

struct Trace {
    std::vector<SimEvent> events;

    std::string csv() const {
        std::ostringstream os;
        os << "time_s,node,kind,detail\n";
        os.precision(9);
        os << std::fixed;
        for (const auto& e : events) {
            os << e.time_s << "," << e.node << "," << event_kind_name(e.kind) << ","
               << e.detail << "\n";
        }
        return os.str();
    }
};

struct SessionReport {
    std::string session;
    std::string status;  // mutual-auth-ok | aborted | done | stalled
    double completed_at = 0;
};

struct SimResult {
    Trace trace;
    std::vector<std::pair<double, Alert>> alerts;
    std::vector<SessionReport> sessions;
    bool stalled = false;
    std::vector<std::string> stuck;
    double total_time = 0;
    double bus_busy_s = 0;
    double crypto_busy_s = 0;  // union of node compute intervals
    std::size_t frames = 0;
    std::size_t auth_ok = 0;

    std::string status() const {
        if (stalled) return "stall";
        for (const auto& s : sessions) {
            if (s.status == "aborted") return "protocol-abort";
        }
        return "ok";
    }
};

namespace detail {

struct PendingFrame {
    CanFdFrame frame;
    double ready_at;
    std::uint64_t seq;
};

struct FrameOrder {
    bool operator()(const PendingFrame& a, const PendingFrame& b) const {
        if (a.frame.can_id != b.frame.can_id) return a.frame.can_id > b.frame.can_id;
        return a.seq > b.seq;
    }
};

inline double merge_intervals(std::vector<std::pair<double, double>>& iv) {
    std::sort(iv.begin(), iv.end());
    double total = 0, lo = 0, hi = -1;
    for (const auto& [a, b] : iv) {
        if (a > hi) {
            if (hi > lo) total += hi - lo;
            lo = a;
            hi = b;
        } else {
            hi = std::max(hi, b);
        }
    }
    if (hi > lo) total += hi - lo;
    return total;
}

}  // namespace detail

class Simulator {
public:
    Simulator(const Scenario& scenario, std::uint64_t seed)
        : sc_(scenario), fleet_(scenario.fleet_spec(seed)) {
        sc_.bus.validate();
        codec_ = WireCodec{sc_.n_attrs, sc_.params.element_bytes()};
        // slots: agent first, then senders, then receivers, in spec order
        register_node(sc_.sa_id, sc_.sa_class, NodeRole::Agent);
        for (const auto& s : sc_.senders) register_node(s.id, NodeClass::Ecu, NodeRole::Sender);
        for (const auto& r : sc_.receivers) {
            register_node(r.id, NodeClass::Ecu, NodeRole::Receiver);
        }
    }

    SimResult run() {
        for (const auto& s : sc_.senders) {
            schedule_handler(0.0, node_index(s.id), Work{WorkKind::StartSender, {}, 0});
        }
        for (const auto& r : sc_.receivers) {
            if (!r.targets.empty()) {
                schedule_handler(0.0, node_index(r.id), Work{WorkKind::StartReceiver, {}, 0});
            }
        }
        loop();
        finish();
        return std::move(res_);
    }

private:
    enum class NodeRole { Agent, Sender, Receiver };
    enum class WorkKind { StartSender, StartReceiver, Deliver, CloseWindow };

    struct Work {
        WorkKind kind;
        WireMessage msg;   // Deliver only
        std::size_t aux;   // receiver target index / window generation
    };

    struct Node {
        std::uint16_t id;
        std::uint8_t slot;
        NodeClass klass;
        NodeRole role;
        double busy_until = 0;
        std::deque<std::pair<double, Work>> inbox;
        bool wake_pending = false;
        std::map<std::uint8_t, std::vector<CanFdFrame>> partial;
        std::size_t next_target = 0;
        std::size_t window_generation = 0;
        std::set<std::string> reported;
        std::size_t alerts_seen = 0;
    };

    struct HeapEvent {
        double t;
        std::uint64_t seq;
        enum Kind { Wake, FrameEnd, Window, BusCheck } kind;
        std::size_t node;
        std::size_t aux;

        bool operator>(const HeapEvent& o) const {
            if (t != o.t) return t > o.t;
            return seq > o.seq;
        }
    };

    void register_node(std::uint16_t id, NodeClass klass, NodeRole role) {
        Node n;
        n.id = id;
        n.slot = static_cast<std::uint8_t>(nodes_.size());
        if (n.slot >= 0x7f) throw SimError("too many nodes for the id space");
        n.klass = klass;
        n.role = role;
        index_[id] = nodes_.size();
        nodes_.push_back(std::move(n));
    }

    std::size_t node_index(std::uint16_t id) const { return index_.at(id); }

    std::string node_name(const Node& n) const {
        switch (n.role) {
            case NodeRole::Agent: return "SA" + std::to_string(n.id);
            case NodeRole::Sender: return "S" + std::to_string(n.id);
            case NodeRole::Receiver: return "R" + std::to_string(n.id);
        }
        return "?";
    }

    void log(double t, const Node& n, EventKind k, std::string detail) {
        res_.trace.events.push_back(SimEvent{t, node_name(n), k, std::move(detail)});
    }

    void schedule_handler(double t, std::size_t node, Work w) {
        nodes_[node].inbox.emplace_back(t, std::move(w));
        wake(node, t);
    }

    void wake(std::size_t node, double t) {
        heap_.push(HeapEvent{std::max(t, nodes_[node].busy_until), next_seq_++,
                             HeapEvent::Wake, node, 0});
    }

    // --- bus ------------------------------------------------------------------

    // Identifier priority follows protocol phase; the key digest rides right
    // behind the ciphertext so receivers are never starved of it by the
    // partial-result burst.
    static unsigned phase_priority(MsgType type) {
        switch (type) {
            case MsgType::Hello: return 1;
            case MsgType::Challenge: return 2;
            case MsgType::CipherPublish: return 3;
            case MsgType::KeyDigest: return 4;
            case MsgType::Request: return 5;
            case MsgType::RequestChallenge: return 6;
            case MsgType::CredentialSubmit: return 7;
            case MsgType::PartialResult: return 8;
            case MsgType::ReceiverAck: return 9;
            case MsgType::GroupList: return 10;
        }
        return 15;
    }

    std::uint16_t can_id_for(MsgType type, std::uint8_t dst_slot) const {
        return static_cast<std::uint16_t>((phase_priority(type) << 7) | dst_slot);
    }

    void enqueue_message(double t, Node& src, const Outgoing& out) {
        std::uint8_t dst_slot = out.broadcast ? 0x7f : nodes_[node_index(out.dst)].slot;
        Bytes raw = encode(out.msg);
        auto frames = fragment(raw, next_msg_id_++, can_id_for(out.msg.type, dst_slot));
        for (auto& f : frames) {
            txq_[src.slot].push(detail::PendingFrame{std::move(f), t, next_seq_++});
        }
        // frames become eligible at t; retry arbitration then if the bus is busy
        heap_.push(HeapEvent{t, next_seq_++, HeapEvent::BusCheck, 0, 0});
    }

    void try_start_bus(double now) {
        double t = std::max(now, bus_free_at_);
        if (bus_busy_) return;
        std::vector<std::pair<std::uint16_t, std::uint16_t>> pending;
        std::vector<std::size_t> slots;
        for (auto& [slot, q] : txq_) {
            if (!q.empty() && q.top().ready_at <= t) {
                pending.emplace_back(nodes_by_slot(slot).id, q.top().frame.can_id);
                slots.push_back(slot);
            }
        }
        if (pending.empty()) return;
        std::size_t win = arbitrate(pending);
        auto& q = txq_[slots[win]];
        detail::PendingFrame pf = q.top();
        q.pop();
        bus_busy_ = true;
        double dt = frame_time(pf.frame.payload.size(), sc_.bus);
        res_.bus_busy_s += dt;
        ++res_.frames;
        Node& src = nodes_by_slot(slots[win]);
        log(t, src, EventKind::TxStart,
            frame_detail(pf.frame));
        heap_.push(HeapEvent{t + dt, next_seq_++, HeapEvent::FrameEnd, node_index(src.id), 0});
        inflight_ = std::move(pf.frame);
        inflight_src_ = slots[win];
    }

    static std::string frame_detail(const CanFdFrame& f) {
        std::ostringstream os;
        os << "id=0x" << std::hex << f.can_id << std::dec << " msg=" << int(f.msg_id())
           << " frag=" << f.frag_index() + 1 << "/" << f.frag_total();
        return os.str();
    }

    void on_frame_end(double t) {
        bus_busy_ = false;
        bus_free_at_ = t;
        Node& src = nodes_by_slot(inflight_src_);
        log(t, src, EventKind::TxEnd, frame_detail(inflight_));

        if (sc_.attack == AttackKind::TamperBit && !attack_done_ &&
            (inflight_.can_id >> 7) == static_cast<unsigned>(MsgType::CipherPublish)) {
            inflight_.payload.back() ^= 0x01;  // active attacker flips a payload bit
            attack_done_ = true;
        }

        std::uint8_t dst_slot = inflight_.can_id & 0x7f;
        for (auto& n : nodes_) {
            if (n.slot == inflight_src_) continue;  // controllers do not self-receive
            bool take = dst_slot == 0x7f ? n.role == NodeRole::Receiver : n.slot == dst_slot;
            if (!take) continue;
            deliver_frame(t, n, inflight_);
        }
        try_start_bus(t);
    }

    void deliver_frame(double t, Node& n, const CanFdFrame& f) {
        auto& parts = n.partial[f.msg_id()];
        parts.push_back(f);
        if (parts.size() < f.frag_total()) return;
        Bytes raw;
        try {
            raw = reassemble(parts);
        } catch (const SimError&) {
            record_alert(t, Alert{node_name(n), 0, AlertCode::DecodeError});
            n.partial.erase(f.msg_id());
            return;
        }
        n.partial.erase(f.msg_id());
        log(t, n, EventKind::Rx, std::string(msg_type_name(static_cast<MsgType>(raw.at(0)))));
        WireMessage msg;
        try {
            msg = codec_.decode(raw);
        } catch (const CodecError&) {
            record_alert(t, Alert{node_name(n), 0, AlertCode::DecodeError});
            log(t, n, EventKind::Abort, "decode");
            return;
        }
        schedule_handler(t, node_index(n.id), Work{WorkKind::Deliver, std::move(msg), 0});

        // scripted single-shot attacks ride on the first matching delivery:
        // the recorded bytes are re-injected from the original source slot
        if (sc_.attack == AttackKind::ReplayDup && !attack_done_ &&
            msg.type == MsgType::Hello) {
            attack_done_ = true;
            auto frames = fragment(raw, next_msg_id_++, inflight_.can_id);
            for (auto& fr : frames) {
                txq_[inflight_src_].push(detail::PendingFrame{std::move(fr), t, next_seq_++});
            }
            heap_.push(HeapEvent{t, next_seq_++, HeapEvent::BusCheck, 0, 0});
        }
    }

    // --- node compute -----------------------------------------------------------

    void service_node(double t, std::size_t ni) {
        Node& n = nodes_[ni];
        if (n.busy_until > t || n.inbox.empty()) return;
        auto [ready, work] = n.inbox.front();
        if (ready > t) return;
        n.inbox.pop_front();

        std::vector<Outgoing> outs;
        auto started = std::chrono::steady_clock::now();
        CostTally tally;
        switch (work.kind) {
            case WorkKind::StartSender: {
                auto& ep = fleet_.sender(n.id);
                outs = ep.start(sc_.epoch);
                tally = ep.take_cost();
                break;
            }
            case WorkKind::StartReceiver: {
                auto& ep = fleet_.receiver(n.id);
                const auto& targets = receiver_cfg(n.id).targets;
                if (n.next_target < targets.size()) {
                    outs = ep.start(sc_.epoch, targets[n.next_target]);
                    ++n.next_target;
                    tally = ep.take_cost();
                }
                break;
            }
            case WorkKind::Deliver: {
                outs = dispatch(n, work.msg);
                break;
            }
            case WorkKind::CloseWindow: {
                auto& ep = fleet_.sender(n.id);
                if (work.aux == n.window_generation) {
                    outs = ep.close_window();
                    tally = ep.take_cost();
                }
                break;
            }
        }
        if (work.kind == WorkKind::Deliver) tally = pending_tally_;

        double cost;
        if (sc_.live_costs) {
            cost = std::chrono::duration<double>(std::chrono::steady_clock::now() - started)
                       .count();
        } else {
            cost = sc_.costs.handler_cost(n.klass, tally);
        }

        log(t, n, EventKind::ComputeStart, work_name(work));
        double done = t + cost;
        log(done, n, EventKind::ComputeEnd, work_name(work));
        n.busy_until = done;
        compute_intervals_.emplace_back(t, done);

        flush_alerts(done, n);
        for (const auto& o : outs) enqueue_message(done, n, o);
        if (arm_window_pending_ != WindowArm::None) {
            double window = sc_.ack_window_s;
            if (arm_window_pending_ == WindowArm::Opening) window *= 10;
            arm_window_pending_ = WindowArm::None;
            ++n.window_generation;
            heap_.push(HeapEvent{done + window, next_seq_++, HeapEvent::Window, ni,
                                 n.window_generation});
        }
        post_handler(done, n);

        if (!n.inbox.empty()) wake(ni, done);
    }

    std::vector<Outgoing> dispatch(Node& n, const WireMessage& msg) {
        std::vector<Outgoing> outs;
        switch (n.role) {
            case NodeRole::Agent: {
                outs = fleet_.sa().handle(msg);
                pending_tally_ = fleet_.sa().take_cost();
                break;
            }
            case NodeRole::Sender: {
                auto& ep = fleet_.sender(n.id);
                bool was_collecting = ep.state() == SenderEndpoint::State::Collecting;
                outs = ep.handle(msg);
                pending_tally_ = ep.take_cost();
                if (ep.state() == SenderEndpoint::State::Collecting) {
                    // a generous first-ack deadline when collection opens, then
                    // a short straggler window after each accepted ack
                    arm_window_pending_ = was_collecting ? WindowArm::PerAck
                                                         : WindowArm::Opening;
                }
                break;
            }
            case NodeRole::Receiver: {
                auto& ep = fleet_.receiver(n.id);
                outs = ep.handle(msg);
                pending_tally_ = ep.take_cost();
                break;
            }
        }
        return outs;
    }

    void post_handler(double t, Node& n) {
        if (n.role == NodeRole::Sender) {
            auto& ep = fleet_.sender(n.id);
            if (ep.done() && n.reported.insert(ep.session()).second) {
                res_.sessions.push_back({ep.session(), "done", t});
                ++n.window_generation;  // cancel any pending window timeout
            }
            if (ep.aborted() && n.reported.insert(ep.session()).second) {
                res_.sessions.push_back({ep.session(), "aborted", t});
                log(t, n, EventKind::Abort, ep.session());
            }
        }
        if (n.role == NodeRole::Receiver) {
            auto& ep = fleet_.receiver(n.id);
            if (ep.terminal() && n.reported.insert(ep.session()).second) {
                bool ok = ep.mutual_auth_ok();
                res_.sessions.push_back({ep.session(), ok ? "mutual-auth-ok" : "aborted", t});
                if (ok) ++res_.auth_ok;
                else log(t, n, EventKind::Abort, ep.session());
                // next target, if any
                if (n.next_target < receiver_cfg(n.id).targets.size()) {
                    schedule_handler(t, node_index(n.id),
                                     Work{WorkKind::StartReceiver, {}, 0});
                }
            }
        }
    }

    void flush_alerts(double t, Node& n) {
        const std::vector<Alert>* list = nullptr;
        switch (n.role) {
            case NodeRole::Agent: list = &fleet_.sa().alerts(); break;
            case NodeRole::Sender: list = &fleet_.sender(n.id).alerts(); break;
            case NodeRole::Receiver: list = &fleet_.receiver(n.id).alerts(); break;
        }
        for (std::size_t i = n.alerts_seen; i < list->size(); ++i) {
            record_alert(t, (*list)[i]);
            log(t, n, EventKind::Abort, (*list)[i].csv(t));
        }
        n.alerts_seen = list->size();
    }

    void record_alert(double t, Alert a) { res_.alerts.emplace_back(t, std::move(a)); }

    const FleetSpec::Receiver& receiver_cfg(std::uint16_t id) const {
        for (const auto& r : sc_.receivers) {
            if (r.id == id) return r;
        }
        throw SimError("unknown receiver id");
    }

    static std::string work_name(const Work& w) {
        switch (w.kind) {
            case WorkKind::StartSender: return "start-sender";
            case WorkKind::StartReceiver: return "start-receiver";
            case WorkKind::Deliver: return msg_type_name(w.msg.type);
            case WorkKind::CloseWindow: return "close-window";
        }
        return "?";
    }

    Node& nodes_by_slot(std::size_t slot) {
        for (auto& n : nodes_) {
            if (n.slot == slot) return n;
        }
        throw SimError("bad slot");
    }

    void loop() {
        while (!heap_.empty()) {
            HeapEvent e = heap_.top();
            heap_.pop();
            now_ = std::max(now_, e.t);
            switch (e.kind) {
                case HeapEvent::Wake: service_node(e.t, e.node); break;
                case HeapEvent::FrameEnd: on_frame_end(e.t); break;
                case HeapEvent::BusCheck: try_start_bus(e.t); break;
                case HeapEvent::Window:
                    if (e.aux == nodes_[e.node].window_generation) {
                        schedule_handler(e.t, e.node, Work{WorkKind::CloseWindow, {}, e.aux});
                    }
                    break;
            }
        }
    }

    void finish() {
        res_.crypto_busy_s = detail::merge_intervals(compute_intervals_);
        // sessions that never reached a terminal state have timed out
        for (const auto& r : sc_.receivers) {
            auto& ep = fleet_.receiver(r.id);
            if (!ep.terminal() && ep.state() != ReceiverEndpoint::State::Idle) {
                res_.stalled = true;
                res_.stuck.push_back(ep.session());
                res_.sessions.push_back({ep.session(), "stalled", now_});
                ep.expire();
                flush_alerts(now_, nodes_[node_index(r.id)]);
            }
        }
        for (const auto& s : sc_.senders) {
            auto& ep = fleet_.sender(s.id);
            if (!ep.done() && !ep.aborted()) {
                res_.stalled = true;
                res_.stuck.push_back(ep.session());
                res_.sessions.push_back({ep.session(), "stalled", now_});
                ep.expire();
                flush_alerts(now_, nodes_[node_index(s.id)]);
            }
        }
        // completion time: last session settlement, not trailing timer noise
        res_.total_time = 0;
        for (const auto& s : res_.sessions) {
            res_.total_time = std::max(res_.total_time, s.completed_at);
        }
        std::sort(res_.sessions.begin(), res_.sessions.end(),
                  [](const SessionReport& a, const SessionReport& b) {
                      return a.session < b.session;
                  });
        // events are logged when scheduled; order the trace by time
        std::stable_sort(res_.trace.events.begin(), res_.trace.events.end(),
                         [](const SimEvent& a, const SimEvent& b) {
                             return a.time_s < b.time_s;
                         });
    }

    Scenario sc_;
    Fleet fleet_;
    WireCodec codec_;
    std::vector<Node> nodes_;
    std::map<std::uint16_t, std::size_t> index_;
    std::map<std::size_t,
             std::priority_queue<detail::PendingFrame, std::vector<detail::PendingFrame>,
                                 detail::FrameOrder>>
        txq_;
    std::priority_queue<HeapEvent, std::vector<HeapEvent>, std::greater<HeapEvent>> heap_;
    std::uint64_t next_seq_ = 0;
    std::uint8_t next_msg_id_ = 0;
    bool bus_busy_ = false;
    double bus_free_at_ = 0;
    CanFdFrame inflight_;
    std::size_t inflight_src_ = 0;
    enum class WindowArm { None, Opening, PerAck };

    bool attack_done_ = false;
    WindowArm arm_window_pending_ = WindowArm::None;
    double now_ = 0;
    CostTally pending_tally_;
    std::vector<std::pair<double, double>> compute_intervals_;
    SimResult res_;
};

inline SimResult run_simulation(const Scenario& scenario, std::uint64_t seed) {
    Simulator sim(scenario, seed);
    return sim.run();
}

}  // namespace ecsvc
