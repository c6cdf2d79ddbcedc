#pragma once

// Scenario and sweep configuration: INI-style sections [group], [bus],
// [costs], [nodes], [policy] (+ [sweep], [attack]). Repeated keys are
// allowed (one line per sender/receiver).

#include <fstream>
#include <sstream>

#include "ecsvc/sim.hpp"

namespace ecsvc {

struct IniEntry {
    std::string section;
    std::string key;
    std::string value;
};

struct IniFile {
    std::vector<IniEntry> entries;
    std::set<std::string> sections;

    static IniFile parse(const std::string& text) {
        auto trim = [](const std::string& s) {
            auto b = s.find_first_not_of(" \t\r");
            if (b == std::string::npos) return std::string();
            auto e = s.find_last_not_of(" \t\r");
            return s.substr(b, e - b + 1);
        };
        IniFile ini;
        std::istringstream is(text);
        std::string line, section;
        int lineno = 0;
        while (std::getline(is, line)) {
            ++lineno;
            auto hash = line.find_first_of("#;");
            if (hash != std::string::npos) line.erase(hash);
            line = trim(line);
            if (line.empty()) continue;
            if (line.front() == '[') {
                if (line.back() != ']') {
                    throw ConfigError("line " + std::to_string(lineno) +
                                      ": unterminated section");
                }
                section = trim(line.substr(1, line.size() - 2));
                ini.sections.insert(section);
                continue;
            }
            auto eq = line.find('=');
            if (eq == std::string::npos) {
                throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
            }
            std::string key = trim(line.substr(0, eq));
            if (key.empty()) throw ConfigError("line " + std::to_string(lineno) + ": empty key");
            ini.entries.push_back(IniEntry{section, key, trim(line.substr(eq + 1))});
        }
        return ini;
    }

    static IniFile load(const std::string& path) {
        std::ifstream f(path);
        if (!f) throw ConfigError("cannot open config file: " + path);
        std::ostringstream os;
        os << f.rdbuf();
        return parse(os.str());
    }

    std::optional<std::string> get(const std::string& section, const std::string& key) const {
        std::optional<std::string> out;
        for (const auto& e : entries) {
            if (e.section == section && e.key == key) out = e.value;  // last wins
        }
        return out;
    }

    std::vector<std::string> get_all(const std::string& section, const std::string& key) const {
        std::vector<std::string> out;
        for (const auto& e : entries) {
            if (e.section == section && e.key == key) out.push_back(e.value);
        }
        return out;
    }
};

namespace detail {

inline double to_double(const std::string& s, const std::string& what) {
    try {
        std::size_t pos = 0;
        double v = std::stod(s, &pos);
        if (pos != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw ConfigError("bad number for " + what + ": " + s);
    }
}

inline long to_long(const std::string& s, const std::string& what) {
    try {
        std::size_t pos = 0;
        long v = std::stol(s, &pos, 0);
        if (pos != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw ConfigError("bad integer for " + what + ": " + s);
    }
}

inline std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : s) {
        if (c == sep) {
            out.push_back(cur);
            cur.clear();
        } else if (c != ' ' && c != '\t') {
            cur += c;
        }
    }
    if (!cur.empty()) out.push_back(cur);
    return out;
}

// "id=16 receivers=32,33" style attribute lists on node lines
inline std::map<std::string, std::string> kv_fields(const std::string& line) {
    std::map<std::string, std::string> out;
    std::istringstream is(line);
    std::string tok;
    while (is >> tok) {
        auto eq = tok.find('=');
        if (eq == std::string::npos) throw ConfigError("expected field=value in: " + line);
        out[tok.substr(0, eq)] = tok.substr(eq + 1);
    }
    return out;
}

inline std::vector<std::uint16_t> id_list(const std::string& s, const std::string& what) {
    std::vector<std::uint16_t> out;
    for (const auto& part : split(s, ',')) {
        out.push_back(static_cast<std::uint16_t>(to_long(part, what)));
    }
    return out;
}

inline Policy parse_policy(const std::string& s) {
    Policy p;
    for (const auto& part : split(s, ',')) {
        if (part == "1" || part == "+1") p.trits.push_back(1);
        else if (part == "0") p.trits.push_back(0);
        else if (part == "-1") p.trits.push_back(-1);
        else throw ConfigError("policy trit must be 1, 0 or -1: " + part);
    }
    if (p.trits.empty()) throw ConfigError("empty policy");
    return p;
}

}  // namespace detail

inline GroupParams group_from_ini(const IniFile& ini) {
    if (auto name = ini.get("group", "name")) return named_group(*name);
    auto p = ini.get("group", "p");
    auto q = ini.get("group", "q");
    auto g = ini.get("group", "g");
    if (!p || !q || !g) {
        throw ConfigError("[group] needs either name= or the p/q/g hex block");
    }
    return parse_group("p = " + *p + "\nq = " + *q + "\ng = " + *g + "\n");
}

// Builds a Scenario from a parsed config. Unknown keys are rejected so typos
// fail loudly.
inline Scenario scenario_from_ini(const IniFile& ini) {
    static const std::set<std::string> known = {
        "group.name", "group.p", "group.q", "group.g",
        "bus.arb_rate", "bus.data_rate", "bus.arb_phase_bits", "bus.data_overhead_bits",
        "costs.sa_clock", "costs.mode", "costs.allow_extrapolation",
        "nodes.system_attributes", "nodes.seed", "nodes.epoch", "nodes.sa_id",
        "nodes.sender", "nodes.receiver", "nodes.ack_window_ms",
        "nodes.receiver_computes_time_key",
        "policy.trits",
        "attack.kind",
        "sweep.param", "sweep.values",
    };
    for (const auto& e : ini.entries) {
        std::string full = e.section + "." + e.key;
        bool per_sender_policy = e.section == "policy" && e.key.rfind("trits.", 0) == 0;
        if (!known.count(full) && !per_sender_policy) {
            throw ConfigError("unknown config key: " + full);
        }
    }

    Scenario sc;
    sc.params = group_from_ini(ini);

    if (auto v = ini.get("bus", "arb_rate")) sc.bus.arb_rate = detail::to_double(*v, "arb_rate");
    if (auto v = ini.get("bus", "data_rate")) {
        sc.bus.data_rate = detail::to_double(*v, "data_rate");
    }
    if (auto v = ini.get("bus", "arb_phase_bits")) {
        sc.bus.arb_phase_bits = static_cast<unsigned>(detail::to_long(*v, "arb_phase_bits"));
    }
    if (auto v = ini.get("bus", "data_overhead_bits")) {
        sc.bus.data_overhead_bits =
            static_cast<unsigned>(detail::to_long(*v, "data_overhead_bits"));
    }
    sc.bus.validate();

    if (auto v = ini.get("costs", "sa_clock")) {
        if (*v == "600mhz") sc.sa_class = NodeClass::Sa600MHz;
        else if (*v == "1.4ghz") sc.sa_class = NodeClass::Sa1400MHz;
        else throw ConfigError("sa_clock must be 600mhz or 1.4ghz");
    }
    if (auto v = ini.get("costs", "mode")) {
        if (*v == "live") sc.live_costs = true;
        else if (*v != "table") throw ConfigError("costs.mode must be table or live");
    }
    if (auto v = ini.get("costs", "allow_extrapolation")) {
        sc.costs.allow_extrapolation = (*v == "true" || *v == "1");
    }

    auto n_attrs = ini.get("nodes", "system_attributes");
    if (!n_attrs) throw ConfigError("[nodes] system_attributes is required");
    sc.n_attrs = static_cast<std::size_t>(detail::to_long(*n_attrs, "system_attributes"));
    if (auto v = ini.get("nodes", "sa_id")) {
        sc.sa_id = static_cast<std::uint16_t>(detail::to_long(*v, "sa_id"));
    }
    if (auto v = ini.get("nodes", "epoch")) {
        Bytes e = from_hex(*v);
        if (e.size() != kEpochBytes) throw ConfigError("epoch must be 8 hex bytes");
        sc.epoch = e;
    }
    if (auto v = ini.get("nodes", "ack_window_ms")) {
        sc.ack_window_s = detail::to_double(*v, "ack_window_ms") * 1e-3;
    }
    // receiver_computes_time_key documents the reading of who derives the
    // time key; only the receiver-side derivation is implemented
    if (auto v = ini.get("nodes", "receiver_computes_time_key")) {
        if (*v != "true" && *v != "1") {
            throw ConfigError("only receiver-side time-key derivation is supported");
        }
    }

    Policy default_policy;
    if (auto v = ini.get("policy", "trits")) default_policy = detail::parse_policy(*v);

    for (const auto& line : ini.get_all("nodes", "sender")) {
        auto kv = detail::kv_fields(line);
        if (!kv.count("id")) throw ConfigError("sender needs id=");
        FleetSpec::Sender s;
        s.id = static_cast<std::uint16_t>(detail::to_long(kv["id"], "sender id"));
        s.policy = default_policy;
        if (auto pv = ini.get("policy", "trits." + std::to_string(s.id))) {
            s.policy = detail::parse_policy(*pv);
        }
        if (s.policy.trits.empty()) {
            throw ConfigError("sender " + std::to_string(s.id) + " has no policy");
        }
        if (kv.count("receivers")) s.receivers = detail::id_list(kv["receivers"], "receivers");
        sc.senders.push_back(std::move(s));
    }
    for (const auto& line : ini.get_all("nodes", "receiver")) {
        auto kv = detail::kv_fields(line);
        if (!kv.count("id") || !kv.count("attrs")) throw ConfigError("receiver needs id= attrs=");
        FleetSpec::Receiver r;
        r.id = static_cast<std::uint16_t>(detail::to_long(kv["id"], "receiver id"));
        std::vector<std::uint32_t> attrs;
        for (const auto& part : detail::split(kv["attrs"], ',')) {
            attrs.push_back(static_cast<std::uint32_t>(detail::to_long(part, "attrs")));
        }
        r.attrs = AttributeSet(std::move(attrs));
        if (kv.count("targets")) r.targets = detail::id_list(kv["targets"], "targets");
        sc.receivers.push_back(std::move(r));
    }
    if (sc.senders.empty()) throw ConfigError("scenario needs at least one sender");

    // defaults: receivers fetch from the first sender; senders expect the
    // receivers that target them
    for (auto& r : sc.receivers) {
        if (r.targets.empty()) r.targets = {sc.senders.front().id};
    }
    for (auto& s : sc.senders) {
        if (s.receivers.empty()) {
            for (const auto& r : sc.receivers) {
                if (std::find(r.targets.begin(), r.targets.end(), s.id) != r.targets.end()) {
                    s.receivers.push_back(r.id);
                }
            }
        }
        s.policy.validate(sc.n_attrs);
    }
    for (const auto& r : sc.receivers) r.attrs.validate(sc.n_attrs);

    if (auto v = ini.get("attack", "kind")) {
        if (*v == "replay") sc.attack = AttackKind::ReplayDup;
        else if (*v == "tamper") sc.attack = AttackKind::TamperBit;
        else if (*v != "none") throw ConfigError("attack.kind must be replay, tamper or none");
    }
    return sc;
}

inline std::uint64_t seed_from_ini(const IniFile& ini) {
    if (auto v = ini.get("nodes", "seed")) {
        return static_cast<std::uint64_t>(detail::to_long(*v, "seed"));
    }
    return 1;
}

// --- sweeps -------------------------------------------------------------------

enum class SweepParam { DataRate, NSysAtt, NRxAtt, NRxEcu, NTxEcu, SaClock };

struct SweepSpec {
    SweepParam param;
    std::vector<double> values;
    Scenario baseline;
    std::uint64_t seed = 1;
};

inline SweepSpec sweep_from_ini(const IniFile& ini) {
    SweepSpec sw;
    auto p = ini.get("sweep", "param");
    auto v = ini.get("sweep", "values");
    if (!p || !v) throw ConfigError("[sweep] needs param= and values=");
    static const std::map<std::string, SweepParam> names = {
        {"data_rate", SweepParam::DataRate}, {"n_sys_att", SweepParam::NSysAtt},
        {"n_rx_att", SweepParam::NRxAtt},    {"n_rx_ecu", SweepParam::NRxEcu},
        {"n_tx_ecu", SweepParam::NTxEcu},    {"sa_clock", SweepParam::SaClock},
    };
    auto it = names.find(*p);
    if (it == names.end()) throw ConfigError("unknown sweep param: " + *p);
    sw.param = it->second;
    for (const auto& part : detail::split(*v, ',')) {
        sw.values.push_back(detail::to_double(part, "sweep value"));
    }
    if (sw.values.empty()) throw ConfigError("empty sweep value list");
    sw.baseline = scenario_from_ini(ini);
    sw.seed = seed_from_ini(ini);
    return sw;
}

// Synthetic topology used by attribute/topology sweeps: policy requires the
// first n_rx_att attributes, every receiver holds exactly those, n_rx_ecu
// receivers per sender, distinct ids.
inline Scenario synthesize_topology(const Scenario& base, std::size_t n_sys, std::size_t n_rx_att,
                                    std::size_t n_rx_ecu, std::size_t n_tx_ecu) {
    if (n_rx_att > n_sys) throw ConfigError("n_rx_att cannot exceed n_sys_att");
    Scenario sc = base;
    sc.n_attrs = n_sys;
    sc.senders.clear();
    sc.receivers.clear();
    Policy policy;
    policy.trits.assign(n_sys, 0);
    for (std::size_t i = 0; i < n_rx_att; ++i) policy.trits[i] = 1;
    std::vector<std::uint32_t> attrs;
    for (std::size_t i = 0; i < n_rx_att; ++i) attrs.push_back(static_cast<std::uint32_t>(i));

    std::uint16_t next_id = 16;
    for (std::size_t s = 0; s < n_tx_ecu; ++s) {
        FleetSpec::Sender snd;
        snd.id = next_id++;
        snd.policy = policy;
        sc.senders.push_back(std::move(snd));
    }
    std::uint16_t rid = 64;
    for (std::size_t s = 0; s < n_tx_ecu; ++s) {
        for (std::size_t r = 0; r < n_rx_ecu; ++r) {
            FleetSpec::Receiver rec;
            rec.id = rid++;
            rec.attrs = AttributeSet(attrs);
            rec.targets = {sc.senders[s].id};
            sc.senders[s].receivers.push_back(rec.id);
            sc.receivers.push_back(std::move(rec));
        }
    }
    return sc;
}

struct ResultRow {
    double data_rate;
    std::size_t n_sys_att;
    std::size_t n_rx_att;
    std::size_t n_rx_ecu;
    std::size_t n_tx_ecu;
    std::string sa_clock;
    std::uint64_t seed;
    double total_time_s;
    double crypto_s;
    double bus_s;
    std::string status;

    static std::string header() {
        return "data_rate,n_sys_att,n_rx_att,n_rx_ecu,n_tx_ecu,sa_clock,seed,"
               "total_time_s,crypto_s,bus_s,status";
    }

    std::string csv() const {
        std::ostringstream os;
        os.precision(9);
        os << data_rate << "," << n_sys_att << "," << n_rx_att << "," << n_rx_ecu << ","
           << n_tx_ecu << "," << sa_clock << "," << seed << "," << std::fixed << total_time_s
           << "," << crypto_s << "," << bus_s << "," << status;
        return os.str();
    }
};

inline ResultRow row_from_result(const Scenario& sc, std::uint64_t seed, const SimResult& res,
                                 const std::string& status_override = "") {
    ResultRow row;
    row.data_rate = sc.bus.data_rate;
    row.n_sys_att = sc.n_attrs;
    row.n_rx_att = sc.receivers.empty() ? 0 : sc.receivers.front().attrs.size();
    std::size_t per_sender = 0;
    for (const auto& s : sc.senders) per_sender = std::max(per_sender, s.receivers.size());
    row.n_rx_ecu = per_sender;
    row.n_tx_ecu = sc.senders.size();
    row.sa_clock = sc.sa_class == NodeClass::Sa600MHz ? "600mhz" : "1.4ghz";
    row.seed = seed;
    row.total_time_s = res.total_time;
    row.crypto_s = res.crypto_busy_s;
    row.bus_s = res.bus_busy_s;
    row.status = status_override.empty() ? res.status() : status_override;
    return row;
}

}  // namespace ecsvc
