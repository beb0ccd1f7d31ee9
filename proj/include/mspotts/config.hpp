#pragma once

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "geometry.hpp"
#include "solvers.hpp"

namespace mspotts {

// Flat section/key-value configuration text. Order is preserved, so
// parse -> serialize -> parse is a fixed point; comments are dropped.
class KVConfig {
  public:
    struct Section {
        std::string name;
        std::vector<std::pair<std::string, std::string>> entries;
    };

    static KVConfig parse_text(const std::string& text) {
        KVConfig cfg;
        std::istringstream is(text);
        std::string line;
        int lineno = 0;
        std::string section;
        while (std::getline(is, line)) {
            ++lineno;
            std::string t = trim(line);
            if (t.empty() || t[0] == '#' || t[0] == ';') continue;
            if (t.front() == '[') {
                if (t.back() != ']')
                    throw std::invalid_argument("config line " + std::to_string(lineno) +
                                                ": unterminated section header");
                section = trim(t.substr(1, t.size() - 2));
                cfg.section(section);  // materialize even if empty
                continue;
            }
            auto eq = t.find('=');
            if (eq == std::string::npos)
                throw std::invalid_argument("config line " + std::to_string(lineno) +
                                            ": expected key = value");
            std::string key = trim(t.substr(0, eq));
            std::string value = trim(t.substr(eq + 1));
            if (key.empty())
                throw std::invalid_argument("config line " + std::to_string(lineno) +
                                            ": empty key");
            cfg.set(section, key, value);
        }
        return cfg;
    }

    static KVConfig load(const std::string& path) {
        std::ifstream is(path);
        if (!is) throw std::runtime_error("cannot open config: " + path);
        std::ostringstream buf;
        buf << is.rdbuf();
        return parse_text(buf.str());
    }

    std::string serialize() const {
        std::ostringstream os;
        for (const auto& sec : sections_) {
            if (!sec.name.empty()) os << "[" << sec.name << "]\n";
            for (const auto& [k, v] : sec.entries) os << k << " = " << v << "\n";
            os << "\n";
        }
        return os.str();
    }

    void save(const std::string& path) const {
        std::ofstream os(path, std::ios::binary);
        if (!os) throw std::runtime_error("cannot open for writing: " + path);
        os << serialize();
    }

    bool has(const std::string& section, const std::string& key) const {
        return find(section, key) != nullptr;
    }

    std::string get(const std::string& section, const std::string& key) const {
        const std::string* v = find(section, key);
        if (!v)
            throw std::invalid_argument("config: missing key [" + section + "] " + key);
        return *v;
    }

    std::string get_or(const std::string& section, const std::string& key,
                       const std::string& fallback) const {
        const std::string* v = find(section, key);
        return v ? *v : fallback;
    }

    double get_double(const std::string& section, const std::string& key) const {
        return to_double(section, key, get(section, key));
    }

    double get_double_or(const std::string& section, const std::string& key,
                         double fallback) const {
        const std::string* v = find(section, key);
        return v ? to_double(section, key, *v) : fallback;
    }

    long get_int(const std::string& section, const std::string& key) const {
        return to_int(section, key, get(section, key));
    }

    long get_int_or(const std::string& section, const std::string& key,
                    long fallback) const {
        const std::string* v = find(section, key);
        return v ? to_int(section, key, *v) : fallback;
    }

    void set(const std::string& sec_name, const std::string& key,
             const std::string& value) {
        auto& sec = section(sec_name);
        for (auto& [k, v] : sec.entries)
            if (k == key) {
                v = value;
                return;
            }
        sec.entries.emplace_back(key, value);
    }

    const std::vector<Section>& sections() const { return sections_; }

    bool operator==(const KVConfig& other) const {
        if (sections_.size() != other.sections_.size()) return false;
        for (std::size_t i = 0; i < sections_.size(); ++i) {
            if (sections_[i].name != other.sections_[i].name ||
                sections_[i].entries != other.sections_[i].entries)
                return false;
        }
        return true;
    }

  private:
    static std::string trim(const std::string& s) {
        std::size_t a = 0, b = s.size();
        while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
        while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
        return s.substr(a, b - a);
    }

    static double to_double(const std::string& sec, const std::string& key,
                            const std::string& v) {
        try {
            std::size_t pos = 0;
            double d = std::stod(v, &pos);
            if (pos != v.size()) throw std::invalid_argument("trailing characters");
            return d;
        } catch (const std::exception&) {
            throw std::invalid_argument("config: [" + sec + "] " + key +
                                        ": not a number: '" + v + "'");
        }
    }

    static long to_int(const std::string& sec, const std::string& key,
                       const std::string& v) {
        try {
            std::size_t pos = 0;
            long i = std::stol(v, &pos);
            if (pos != v.size()) throw std::invalid_argument("trailing characters");
            return i;
        } catch (const std::exception&) {
            throw std::invalid_argument("config: [" + sec + "] " + key +
                                        ": not an integer: '" + v + "'");
        }
    }

    const std::string* find(const std::string& sec, const std::string& key) const {
        for (const auto& s : sections_)
            if (s.name == sec)
                for (const auto& [k, v] : s.entries)
                    if (k == key) return &v;
        return nullptr;
    }

    Section& section(const std::string& name) {
        for (auto& s : sections_)
            if (s.name == name) return s;
        sections_.push_back({name, {}});
        return sections_.back();
    }

    std::vector<Section> sections_;
};

enum class NoiseKind { none, poisson, gaussian };

// Typed view of a full experiment description.
struct ExperimentConfig {
    // phantom
    std::string phantom_name;        // builtin name, or empty if file-based
    std::string labels_file;         // text label map (see cli docs)
    std::string lac_file;            // text LAC table
    int n = 64;

    // geometry
    Geometry geometry;
    int simulation_grid = 0;  // finer grid for simulation; 0 -> 2n

    // noise
    NoiseKind noise = NoiseKind::none;
    std::uint64_t seed = 0;
    double gaussian_sigma = 0.0;

    // solver
    std::string method = "admm";
    SolverConfig solver;

    bool metrics_enabled = true;
    std::string output_dir = "out";
    std::vector<std::string> bench_methods;

    static ExperimentConfig from_kv(const KVConfig& kv);
    KVConfig to_kv() const;
    void validate() const;
};

inline const std::vector<std::string>& known_methods() {
    static const std::vector<std::string> m = {
        "admm",     "scg",      "penalty", "s_landweber",
        "cg_plain", "scg_basic_nonascending", "scg_basic_prox"};
    return m;
}

inline ExperimentConfig ExperimentConfig::from_kv(const KVConfig& kv) {
    ExperimentConfig e;
    e.phantom_name = kv.get_or("phantom", "name", "");
    e.labels_file = kv.get_or("phantom", "labels_file", "");
    e.lac_file = kv.get_or("phantom", "lac_file", "");
    e.n = static_cast<int>(kv.get_int_or("phantom", "n", 64));

    std::string mode = kv.get_or("geometry", "mode", "parallel");
    if (mode == "parallel")
        e.geometry.mode = ScanMode::parallel;
    else if (mode == "fan")
        e.geometry.mode = ScanMode::fan;
    else
        throw std::invalid_argument("config: [geometry] mode: unknown mode '" + mode +
                                    "'");
    e.geometry.n = e.n;
    e.geometry.detectors = static_cast<int>(kv.get_int("geometry", "detectors"));
    e.geometry.angles = static_cast<int>(kv.get_int("geometry", "angles"));
    e.geometry.domain_width = kv.get_double_or("geometry", "domain_width_cm", e.n);
    e.geometry.detector_width =
        kv.get_double_or("geometry", "detector_width_cm", e.geometry.domain_width * 1.5);
    e.geometry.source_to_center = kv.get_double_or("geometry", "source_to_center_cm", 0);
    e.geometry.source_to_detector =
        kv.get_double_or("geometry", "source_to_detector_cm", 0);
    e.simulation_grid = static_cast<int>(kv.get_int_or("geometry", "simulation_grid", 0));

    std::string noise = kv.get_or("noise", "model", "none");
    if (noise == "none")
        e.noise = NoiseKind::none;
    else if (noise == "poisson")
        e.noise = NoiseKind::poisson;
    else if (noise == "gaussian")
        e.noise = NoiseKind::gaussian;
    else
        throw std::invalid_argument("config: [noise] model: unknown model '" + noise +
                                    "'");
    e.seed = static_cast<std::uint64_t>(kv.get_int_or("noise", "seed", 0));
    e.gaussian_sigma = kv.get_double_or("noise", "gaussian_sigma", 0.0);

    e.method = kv.get_or("solver", "method", "admm");
    SolverConfig& s = e.solver;
    s.gamma = kv.get_double_or("solver", "gamma", s.gamma);
    s.rho_c0 = kv.get_double_or("solver", "rho_c0", s.rho_c0);
    s.rho_exponent = kv.get_double_or("solver", "rho_exponent", s.rho_exponent);
    s.tol = kv.get_double_or("solver", "tol", s.tol);
    s.cg_tol = kv.get_double_or("solver", "cg_tol", s.cg_tol);
    s.cg_maxiter = static_cast<int>(kv.get_int_or("solver", "cg_maxiter", s.cg_maxiter));
    s.beta0 = kv.get_double_or("solver", "beta0", s.beta0);
    s.annealing = kv.get_double_or("solver", "annealing", s.annealing);
    s.mu0 = kv.get_double_or("solver", "mu0", s.mu0);
    s.mu_fixed = kv.get_double_or("solver", "mu_fixed", s.mu_fixed);
    s.epsilon = kv.get_double_or("solver", "epsilon", s.epsilon);
    s.sigma = kv.get_double_or("solver", "sigma", s.sigma);
    s.max_outer = static_cast<int>(kv.get_int_or("solver", "max_outer", s.max_outer));
    std::string dirs = kv.get_or("solver", "directions", "near_isotropic");
    if (dirs == "near_isotropic")
        s.directions = DirectionSet::near_isotropic();
    else if (dirs == "axial")
        s.directions = DirectionSet::axial();
    else
        throw std::invalid_argument("config: [solver] directions: unknown preset '" +
                                    dirs + "'");

    e.metrics_enabled = kv.get_or("metrics", "enabled", "true") != "false";
    e.output_dir = kv.get_or("output", "dir", "out");

    std::string methods = kv.get_or("bench", "methods", "");
    std::istringstream ms(methods);
    std::string item;
    while (std::getline(ms, item, ',')) {
        std::string t;
        for (char ch : item)
            if (!std::isspace(static_cast<unsigned char>(ch))) t += ch;
        if (!t.empty()) e.bench_methods.push_back(t);
    }
    e.validate();
    return e;
}

inline KVConfig ExperimentConfig::to_kv() const {
    KVConfig kv;
    if (!phantom_name.empty()) kv.set("phantom", "name", phantom_name);
    if (!labels_file.empty()) kv.set("phantom", "labels_file", labels_file);
    if (!lac_file.empty()) kv.set("phantom", "lac_file", lac_file);
    kv.set("phantom", "n", std::to_string(n));

    auto num = [](double v) {
        std::ostringstream os;
        os.precision(17);
        os << v;
        return os.str();
    };
    kv.set("geometry", "mode", geometry.mode == ScanMode::fan ? "fan" : "parallel");
    kv.set("geometry", "detectors", std::to_string(geometry.detectors));
    kv.set("geometry", "angles", std::to_string(geometry.angles));
    kv.set("geometry", "domain_width_cm", num(geometry.domain_width));
    kv.set("geometry", "detector_width_cm", num(geometry.detector_width));
    if (geometry.mode == ScanMode::fan) {
        kv.set("geometry", "source_to_center_cm", num(geometry.source_to_center));
        kv.set("geometry", "source_to_detector_cm", num(geometry.source_to_detector));
    }
    if (simulation_grid > 0)
        kv.set("geometry", "simulation_grid", std::to_string(simulation_grid));

    kv.set("noise", "model", noise == NoiseKind::none
                                 ? "none"
                                 : (noise == NoiseKind::poisson ? "poisson" : "gaussian"));
    kv.set("noise", "seed", std::to_string(seed));
    if (noise == NoiseKind::gaussian)
        kv.set("noise", "gaussian_sigma", num(gaussian_sigma));

    kv.set("solver", "method", method);
    kv.set("solver", "gamma", num(solver.gamma));
    kv.set("solver", "rho_c0", num(solver.rho_c0));
    kv.set("solver", "rho_exponent", num(solver.rho_exponent));
    kv.set("solver", "tol", num(solver.tol));
    kv.set("solver", "cg_tol", num(solver.cg_tol));
    kv.set("solver", "cg_maxiter", std::to_string(solver.cg_maxiter));
    kv.set("solver", "beta0", num(solver.beta0));
    kv.set("solver", "annealing", num(solver.annealing));
    kv.set("solver", "mu0", num(solver.mu0));
    kv.set("solver", "mu_fixed", num(solver.mu_fixed));
    kv.set("solver", "epsilon", num(solver.epsilon));
    kv.set("solver", "sigma", num(solver.sigma));
    kv.set("solver", "max_outer", std::to_string(solver.max_outer));
    kv.set("solver", "directions",
           solver.directions.size() == 2 ? "axial" : "near_isotropic");

    kv.set("metrics", "enabled", metrics_enabled ? "true" : "false");
    kv.set("output", "dir", output_dir);
    if (!bench_methods.empty()) {
        std::string joined;
        for (const auto& m : bench_methods) {
            if (!joined.empty()) joined += ",";
            joined += m;
        }
        kv.set("bench", "methods", joined);
    }
    return kv;
}

inline void ExperimentConfig::validate() const {
    if (phantom_name.empty() && (labels_file.empty() || lac_file.empty()))
        throw std::invalid_argument(
            "config: [phantom] needs either 'name' or both 'labels_file' and 'lac_file'");
    if (n < 1) throw std::invalid_argument("config: [phantom] n: must be >= 1");
    geometry.validate();
    if (simulation_grid < 0)
        throw std::invalid_argument("config: [geometry] simulation_grid: must be >= 0");
    if (noise == NoiseKind::gaussian && gaussian_sigma <= 0.0)
        throw std::invalid_argument(
            "config: [noise] gaussian_sigma: must be positive for gaussian noise");
    const auto& known = known_methods();
    if (std::find(known.begin(), known.end(), method) == known.end())
        throw std::invalid_argument("config: [solver] method: unknown method '" + method +
                                    "'");
    solver.validate();
}

}  // namespace mspotts
