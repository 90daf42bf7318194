#pragma once

// Reading MATPOWER case files, generator dynamics sidecars, and the canonical JSON case format.

#include <cctype>
#include <charconv>
#include <filesystem>
#include <limits>
#include <fstream>
#include <map>
#include <numbers>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "pmuopp/errors.hpp"
#include "pmuopp/netmodel.hpp"

namespace pmuopp {

namespace fs = std::filesystem;
using json = nlohmann::json;

inline constexpr int kCaseFormatVersion = 1;

struct MatpowerTable {
    std::vector<std::vector<double>> rows;
    std::vector<int> row_lines;
};

struct MatpowerFile {
    double base_mva = 0;
    bool has_base_mva = false;
    std::map<std::string, MatpowerTable> tables;
    std::vector<std::string> dropped_fields;
};

struct CaseLoad {
    NetworkCase net;
    std::vector<std::string> warnings;
};

inline std::string read_text_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParseError("cannot open '" + path.string() + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

namespace detail {

inline std::string strip_comment(const std::string& line) {
    bool in_str = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        if (line[i] == '\'') in_str = !in_str;
        if (line[i] == '%' && !in_str) return line.substr(0, i);
    }
    return line;
}

inline std::string trim(const std::string& s) {
    std::size_t a = 0, b = s.size();
    while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
    while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
    return s.substr(a, b - a);
}

inline double parse_number(const std::string& tok, int line, int col) {
    if (tok == "Inf" || tok == "inf") return std::numeric_limits<double>::infinity();
    if (tok == "-Inf" || tok == "-inf") return -std::numeric_limits<double>::infinity();
    double v = 0;
    const char* first = tok.data();
    if (!tok.empty() && tok[0] == '+') ++first;
    auto [ptr, ec] = std::from_chars(first, tok.data() + tok.size(), v);
    if (ec != std::errc() || ptr != tok.data() + tok.size())
        throw ParseError("malformed number '" + tok + "'", line, col);
    return v;
}

// Splits one matrix row into numbers; col is 1-based for error messages.
inline std::vector<double> parse_row(const std::string& text, int line) {
    std::vector<double> out;
    std::size_t i = 0;
    int col = 0;
    while (i < text.size()) {
        while (i < text.size() && (std::isspace(static_cast<unsigned char>(text[i])) || text[i] == ',')) ++i;
        if (i >= text.size()) break;
        std::size_t j = i;
        while (j < text.size() && !std::isspace(static_cast<unsigned char>(text[j])) && text[j] != ',') ++j;
        ++col;
        out.push_back(parse_number(text.substr(i, j - i), line, col));
        i = j;
    }
    return out;
}

}  // namespace detail

inline MatpowerFile parse_matpower_text(const std::string& text) {
    MatpowerFile out;
    std::istringstream in(text);
    std::string raw;
    int lineno = 0;
    bool any_content = false;

    std::string open_field;   // matrix currently being read
    char closing = 0;         // ']' or '}'
    std::string pending;      // partial row text
    int pending_line = 0;

    auto flush_row = [&](MatpowerTable& t) {
        const std::string r = detail::trim(pending);
        if (!r.empty()) {
            t.rows.push_back(detail::parse_row(r, pending_line));
            t.row_lines.push_back(pending_line);
        }
        pending.clear();
    };

    while (std::getline(in, raw)) {
        ++lineno;
        std::string line = detail::strip_comment(raw);
        if (!detail::trim(line).empty()) any_content = true;

        if (open_field.empty()) {
            const std::string t = detail::trim(line);
            if (t.rfind("mpc.", 0) != 0) continue;
            const auto eq = t.find('=');
            if (eq == std::string::npos) throw ParseError("expected '=' after field name", lineno, 1);
            const std::string field = detail::trim(t.substr(4, eq - 4));
            std::string rhs = detail::trim(t.substr(eq + 1));
            if (!rhs.empty() && (rhs[0] == '[' || rhs[0] == '{')) {
                open_field = field;
                closing = rhs[0] == '[' ? ']' : '}';
                if (closing == '}' || (field != "bus" && field != "gen" && field != "branch")) {
                    out.dropped_fields.push_back(field);
                }
                out.tables[field];
                line = rhs.substr(1);
                pending_line = lineno;
            } else {
                if (!rhs.empty() && rhs.back() == ';') rhs.pop_back();
                if (field == "baseMVA") {
                    out.base_mva = detail::parse_number(detail::trim(rhs), lineno, static_cast<int>(eq) + 2);
                    out.has_base_mva = true;
                } else if (field != "version") {
                    out.dropped_fields.push_back(field);
                }
                continue;
            }
        }

        // Inside a matrix literal.
        const bool numeric = closing == ']';
        auto& table = out.tables[open_field];
        if (pending.empty()) pending_line = lineno;
        for (char ch : line) {
            if (ch == closing) {
                if (numeric) flush_row(table);
                pending.clear();
                open_field.clear();
                break;
            }
            if (ch == ';') {
                if (numeric) flush_row(table);
                pending.clear();
                pending_line = lineno;
                continue;
            }
            pending.push_back(ch);
        }
        if (!open_field.empty()) {
            if (numeric) flush_row(table);
            pending.clear();
            pending_line = lineno + 1;
        }
    }
    if (!any_content) throw ParseError("empty case file");
    if (!open_field.empty()) throw ParseError("unterminated matrix for field '" + open_field + "'", lineno, 1);
    if (!out.has_base_mva) throw ParseError("missing mpc.baseMVA");
    for (const char* f : {"bus", "gen", "branch"})
        if (!out.tables.count(f)) throw ParseError(std::string("missing mpc.") + f + " table");
    return out;
}

// Fills the dynamic parameters of each generator from the sidecar JSON.
// Layout: {"omega0": w, "defaults": {...}, "generators": {"<bus id>": {...} | [{...}, ...]}}
// Accepted keys: M or H (M = 2H/omega0), D or D_pu (D = D_pu/omega0), x_d, x_q, x_d_p, T_d0_p, T_CH, R_D.
inline void apply_generator_sidecar(NetworkCase& c, const json& side) {
    if (!side.is_object()) throw ConfigError("generator sidecar must be a JSON object");
    if (side.contains("omega0")) c.omega0 = side.at("omega0").get<double>();
    const json defaults = side.value("defaults", json::object());
    const json gens = side.value("generators", json::object());

    std::map<int, int> seen_per_bus;
    for (auto& g : c.gens) {
        const int orig = c.buses[g.bus - 1].orig_id;
        const std::string key = std::to_string(orig);
        json entry = defaults;
        if (gens.contains(key)) {
            const json& e = gens.at(key);
            const int k = seen_per_bus[orig]++;
            const json& pick = e.is_array() ? e.at(k) : e;
            for (auto it = pick.begin(); it != pick.end(); ++it) entry[it.key()] = it.value();
        }
        auto need = [&](const char* name) -> double {
            if (!entry.contains(name))
                throw ConfigError("missing generator parameter '" + std::string(name) + "' for bus " + key);
            return entry.at(name).get<double>();
        };
        if (entry.contains("M")) g.M = entry.at("M").get<double>();
        else if (entry.contains("H")) g.M = 2.0 * entry.at("H").get<double>() / c.omega0;
        else throw ConfigError("missing generator parameter 'M' (or 'H') for bus " + key);
        if (entry.contains("D")) g.D = entry.at("D").get<double>();
        else if (entry.contains("D_pu")) g.D = entry.at("D_pu").get<double>() / c.omega0;
        else throw ConfigError("missing generator parameter 'D' (or 'D_pu') for bus " + key);
        g.x_d = need("x_d");
        g.x_q = need("x_q");
        g.x_d_p = need("x_d_p");
        g.T_d0_p = need("T_d0_p");
        g.T_CH = need("T_CH");
        g.R_D = need("R_D");
    }
}

inline CaseLoad case_from_matpower(const MatpowerFile& mf, const json& sidecar, const std::string& name) {
    CaseLoad out;
    NetworkCase& c = out.net;
    c.name = name;
    c.base_mva = mf.base_mva;
    for (const auto& f : mf.dropped_fields) out.warnings.push_back("dropped unsupported field mpc." + f);

    const auto& bus = mf.tables.at("bus");
    std::map<int, int> index;  // original id -> contiguous id
    for (std::size_t r = 0; r < bus.rows.size(); ++r) {
        const auto& row = bus.rows[r];
        if (row.size() < 13) throw ParseError("bus row needs 13 columns", bus.row_lines[r], static_cast<int>(row.size()) + 1);
        BusRecord b;
        b.orig_id = static_cast<int>(row[0]);
        if (index.count(b.orig_id)) throw ValidationError("duplicate bus id " + std::to_string(b.orig_id));
        b.id = static_cast<int>(c.buses.size()) + 1;
        index[b.orig_id] = b.id;
        switch (static_cast<int>(row[1])) {
            case 1: b.kind = BusKind::PQ; break;
            case 2: b.kind = BusKind::PV; break;
            case 3: b.kind = BusKind::Slack; break;
            default: throw ParseError("unsupported bus type", bus.row_lines[r], 2);
        }
        b.P_L = row[2] / c.base_mva;
        b.Q_L = row[3] / c.base_mva;
        b.Gs = row[4] / c.base_mva;
        b.Bs = row[5] / c.base_mva;
        b.v = row[7];
        b.theta = row[8] * std::numbers::pi / 180.0;
        c.buses.push_back(b);
    }

    const auto& gen = mf.tables.at("gen");
    for (std::size_t r = 0; r < gen.rows.size(); ++r) {
        const auto& row = gen.rows[r];
        if (row.size() < 8) throw ParseError("gen row needs at least 8 columns", gen.row_lines[r], static_cast<int>(row.size()) + 1);
        if (row[7] <= 0) {
            out.warnings.push_back("skipped out-of-service generator at bus " + std::to_string(static_cast<int>(row[0])));
            continue;
        }
        auto it = index.find(static_cast<int>(row[0]));
        if (it == index.end()) throw ValidationError("generator at unknown bus " + std::to_string(static_cast<int>(row[0])));
        GeneratorParams g;
        g.bus = it->second;
        g.P_G = row[1] / c.base_mva;
        g.Q_G = row[2] / c.base_mva;
        g.v_set = row[5];
        c.gens.push_back(g);
    }

    const auto& br = mf.tables.at("branch");
    for (std::size_t r = 0; r < br.rows.size(); ++r) {
        const auto& row = br.rows[r];
        if (row.size() < 11) throw ParseError("branch row needs 11 columns", br.row_lines[r], static_cast<int>(row.size()) + 1);
        Branch b;
        for (int k : {0, 1}) {
            auto it = index.find(static_cast<int>(row[k]));
            if (it == index.end()) throw ValidationError("branch at unknown bus " + std::to_string(static_cast<int>(row[k])));
            (k == 0 ? b.from : b.to) = it->second;
        }
        b.r = row[2];
        b.x = row[3];
        b.b = row[4];
        b.ratio = row[8];
        b.angle = row[9] * std::numbers::pi / 180.0;
        b.in_service = row[10] > 0;
        c.branches.push_back(b);
    }

    apply_generator_sidecar(c, sidecar);
    finalize_case(c);
    return out;
}

inline json case_to_json(const NetworkCase& c) {
    json j;
    j["format"] = "pmuopp-case";
    j["version"] = kCaseFormatVersion;
    j["name"] = c.name;
    j["base_mva"] = c.base_mva;
    j["omega0"] = c.omega0;
    j["buses"] = json::array();
    for (const auto& b : c.buses)
        j["buses"].push_back({{"id", b.id}, {"orig_id", b.orig_id}, {"kind", to_string(b.kind)},
                              {"P_L", b.P_L}, {"Q_L", b.Q_L}, {"v", b.v}, {"theta", b.theta},
                              {"P_R", b.P_R}, {"Q_R", b.Q_R}, {"Gs", b.Gs}, {"Bs", b.Bs}});
    j["branches"] = json::array();
    for (const auto& b : c.branches)
        j["branches"].push_back({{"from", b.from}, {"to", b.to}, {"r", b.r}, {"x", b.x}, {"b", b.b},
                                 {"ratio", b.ratio}, {"angle", b.angle}, {"in_service", b.in_service}});
    j["generators"] = json::array();
    for (const auto& g : c.gens)
        j["generators"].push_back({{"bus", g.bus}, {"M", g.M}, {"D", g.D}, {"x_d", g.x_d}, {"x_q", g.x_q},
                                   {"x_d_p", g.x_d_p}, {"T_d0_p", g.T_d0_p}, {"T_CH", g.T_CH}, {"R_D", g.R_D},
                                   {"P_G", g.P_G}, {"Q_G", g.Q_G}, {"v_set", g.v_set}});
    return j;
}

inline NetworkCase case_from_json(const json& j) {
    try {
        if (j.value("format", "") != "pmuopp-case") throw ParseError("not a pmuopp-case JSON document");
        NetworkCase c;
        c.name = j.value("name", "");
        c.base_mva = j.at("base_mva").get<double>();
        c.omega0 = j.at("omega0").get<double>();
        for (const auto& b : j.at("buses")) {
            BusRecord r;
            r.id = b.at("id").get<int>();
            r.orig_id = b.at("orig_id").get<int>();
            r.kind = bus_kind_from_string(b.at("kind").get<std::string>());
            r.P_L = b.at("P_L").get<double>();
            r.Q_L = b.at("Q_L").get<double>();
            r.v = b.at("v").get<double>();
            r.theta = b.at("theta").get<double>();
            r.P_R = b.at("P_R").get<double>();
            r.Q_R = b.at("Q_R").get<double>();
            r.Gs = b.at("Gs").get<double>();
            r.Bs = b.at("Bs").get<double>();
            c.buses.push_back(r);
        }
        for (const auto& b : j.at("branches")) {
            Branch r;
            r.from = b.at("from").get<int>();
            r.to = b.at("to").get<int>();
            r.r = b.at("r").get<double>();
            r.x = b.at("x").get<double>();
            r.b = b.at("b").get<double>();
            r.ratio = b.at("ratio").get<double>();
            r.angle = b.at("angle").get<double>();
            r.in_service = b.at("in_service").get<bool>();
            c.branches.push_back(r);
        }
        for (const auto& g : j.at("generators")) {
            GeneratorParams r;
            r.bus = g.at("bus").get<int>();
            r.M = g.at("M").get<double>();
            r.D = g.at("D").get<double>();
            r.x_d = g.at("x_d").get<double>();
            r.x_q = g.at("x_q").get<double>();
            r.x_d_p = g.at("x_d_p").get<double>();
            r.T_d0_p = g.at("T_d0_p").get<double>();
            r.T_CH = g.at("T_CH").get<double>();
            r.R_D = g.at("R_D").get<double>();
            r.P_G = g.at("P_G").get<double>();
            r.Q_G = g.at("Q_G").get<double>();
            r.v_set = g.at("v_set").get<double>();
            c.gens.push_back(r);
        }
        finalize_case(c);
        return c;
    } catch (const json::exception& e) {
        throw ParseError(std::string("invalid case JSON: ") + e.what());
    }
}

inline json read_json_file(const fs::path& path) {
    const std::string text = read_text_file(path);
    try {
        return json::parse(text);
    } catch (const json::parse_error& e) {
        throw ParseError("invalid JSON in '" + path.string() + "': " + e.what());
    }
}

// Default sidecar location: "<dir>/<stem>.dyn.json" next to the case file.
inline fs::path default_sidecar_path(const fs::path& case_path) {
    fs::path p = case_path;
    p.replace_extension(".dyn.json");
    return p;
}

// Loads a MATPOWER .m file (with a sidecar) or a canonical JSON case.
inline CaseLoad load_case(const fs::path& path, std::optional<fs::path> sidecar = std::nullopt) {
    if (!fs::exists(path)) throw ParseError("case file not found: " + path.string());
    if (path.extension() == ".json") return {case_from_json(read_json_file(path)), {}};

    const MatpowerFile mf = parse_matpower_text(read_text_file(path));
    const fs::path side = sidecar ? *sidecar : default_sidecar_path(path);
    if (!fs::exists(side)) throw ConfigError("generator dynamics sidecar not found: " + side.string());
    json sj;
    try {
        sj = read_json_file(side);
    } catch (const ParseError& e) {
        throw ConfigError(e.what());
    }
    return case_from_matpower(mf, sj, path.stem().string());
}

inline NetworkCase parse_matpower_case(const fs::path& path, std::optional<fs::path> sidecar = std::nullopt) {
    return load_case(path, std::move(sidecar)).net;
}

}  // namespace pmuopp
