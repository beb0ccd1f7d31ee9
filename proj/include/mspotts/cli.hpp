#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "config.hpp"
#include "image.hpp"
#include "metrics.hpp"
#include "ray_operator.hpp"
#include "rng.hpp"
#include "solvers.hpp"
#include "spectral.hpp"

namespace mspotts {

// Exit codes: 0 success, 2 usage/configuration error, 3 solver stopped at the
// iteration cap without convergence.
inline constexpr int exit_ok = 0;
inline constexpr int exit_config_error = 2;
inline constexpr int exit_not_converged = 3;

namespace cli_detail {

namespace fs = std::filesystem;

inline std::uint64_t fnv1a64_file(const fs::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot hash missing file: " + path.string());
    std::uint64_t h = 0xcbf29ce484222325ULL;
    char buf[1 << 16];
    while (is.read(buf, sizeof buf) || is.gcount() > 0) {
        for (std::streamsize i = 0; i < is.gcount(); ++i) {
            h ^= static_cast<unsigned char>(buf[i]);
            h *= 0x100000001b3ULL;
        }
    }
    return h;
}

// All artifacts are produced under a temporary name and renamed into place,
// so a crash never leaves a half-written file behind.
inline void atomic_write(const fs::path& path,
                         const std::function<void(const std::string&)>& writer) {
    fs::path tmp = path;
    tmp += ".tmp";
    writer(tmp.string());
    fs::rename(tmp, path);
}

// Manifest: one `name  hash` line per artifact, sorted by name.
inline void write_manifest(const fs::path& dir, const std::vector<std::string>& files) {
    std::vector<std::string> sorted = files;
    std::sort(sorted.begin(), sorted.end());
    sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());
    atomic_write(dir / "manifest.txt", [&](const std::string& tmp) {
        std::ofstream os(tmp, std::ios::binary);
        char buf[32];
        for (const auto& name : sorted) {
            std::snprintf(buf, sizeof buf, "%016llx",
                          static_cast<unsigned long long>(fnv1a64_file(dir / name)));
            os << name << "  " << buf << "\n";
        }
    });
}

inline bool verify_manifest(const fs::path& dir) {
    std::ifstream is(dir / "manifest.txt");
    if (!is) return false;
    std::string name, hash;
    char buf[32];
    while (is >> name >> hash) {
        if (!fs::exists(dir / name)) return false;
        std::snprintf(buf, sizeof buf, "%016llx",
                      static_cast<unsigned long long>(fnv1a64_file(dir / name)));
        if (hash != buf) return false;
    }
    return true;
}

inline void save_weights(const std::string& path, const std::vector<double>& w, int m,
                         int channels) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open for writing: " + path);
    os.write("MSWGT1", 6);
    detail::write_u64(os, static_cast<std::uint64_t>(m));
    detail::write_u64(os, static_cast<std::uint64_t>(channels));
    for (double v : w) detail::write_f64(os, v);
}

inline std::vector<double> load_weights(const std::string& path, int& m, int& channels) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open: " + path);
    detail::expect_magic(is, "MSWGT1");
    m = static_cast<int>(detail::read_u64(is));
    channels = static_cast<int>(detail::read_u64(is));
    std::vector<double> w(static_cast<std::size_t>(m) * channels);
    for (double& v : w) v = detail::read_f64(is);
    if (!is) throw std::runtime_error("truncated weights file: " + path);
    return w;
}

// File-based phantom: label map as `n` followed by n*n integers; LAC table
// with the energy grid, bins, flux, and one attenuation curve per material.
inline Phantom load_labels(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open labels file: " + path);
    Phantom ph;
    if (!(is >> ph.n) || ph.n < 1)
        throw std::runtime_error("labels file: invalid grid size in " + path);
    ph.labels.resize(static_cast<std::size_t>(ph.n) * ph.n);
    for (auto& l : ph.labels)
        if (!(is >> l)) throw std::runtime_error("labels file: truncated: " + path);
    return ph;
}

inline SpectralModel load_lac_table(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open LAC table: " + path);
    SpectralModel model;
    int grid = 0, bins = 0, materials = 0;
    if (!(is >> model.energy_start >> model.energy_step >> grid >> bins))
        throw std::runtime_error("LAC table: bad header in " + path);
    model.bins.resize(bins);
    for (auto& b : model.bins)
        if (!(is >> b.begin >> b.end))
            throw std::runtime_error("LAC table: bad bin range in " + path);
    model.flux.resize(grid);
    for (auto& v : model.flux)
        if (!(is >> v)) throw std::runtime_error("LAC table: truncated flux in " + path);
    if (!(is >> materials))
        throw std::runtime_error("LAC table: missing material count in " + path);
    for (int i = 0; i < materials; ++i) {
        Material m;
        if (!(is >> m.name))
            throw std::runtime_error("LAC table: missing material name in " + path);
        m.lac.resize(grid);
        for (auto& v : m.lac)
            if (!(is >> v))
                throw std::runtime_error("LAC table: truncated curve in " + path);
        model.materials.push_back(std::move(m));
    }
    model.validate();
    return model;
}

inline std::pair<Phantom, SpectralModel> make_phantom(const ExperimentConfig& cfg,
                                                      int grid_n) {
    if (!cfg.phantom_name.empty()) return builtin_phantom(cfg.phantom_name, grid_n);
    Phantom ph = load_labels(cfg.labels_file);
    SpectralModel model = load_lac_table(cfg.lac_file);
    if (ph.n != grid_n) {
        // Nearest-neighbor resample of the label map onto the requested grid.
        Phantom fine;
        fine.n = grid_n;
        fine.labels.resize(static_cast<std::size_t>(grid_n) * grid_n);
        for (int y = 0; y < grid_n; ++y)
            for (int x = 0; x < grid_n; ++x) {
                int sx = std::min(ph.n - 1, x * ph.n / grid_n);
                int sy = std::min(ph.n - 1, y * ph.n / grid_n);
                fine.labels[static_cast<std::size_t>(y) * grid_n + x] = ph.label(sx, sy);
            }
        ph = std::move(fine);
    }
    return {std::move(ph), std::move(model)};
}

}  // namespace cli_detail

// ---------------------------------------------------------------------------

inline int cmd_simulate(const ExperimentConfig& cfg) {
    namespace fs = std::filesystem;
    using namespace cli_detail;
    cfg.validate();
    fs::create_directories(cfg.output_dir);
    const fs::path out(cfg.output_dir);

    const int sim_n = cfg.simulation_grid > 0 ? cfg.simulation_grid : 2 * cfg.n;
    auto [phantom, model] = make_phantom(cfg, cfg.n);
    auto [phantom_fine, model_fine] = make_phantom(cfg, sim_n);

    MultiImage truth = make_multichannel_ground_truth(phantom, model);
    MultiImage truth_fine = make_multichannel_ground_truth(phantom_fine, model_fine);

    RayOperator A = build_operator(cfg.geometry, cfg.n);
    RayOperator A_fine = build_operator(cfg.geometry, sim_n);

    Sinogram sino;
    const int m = cfg.geometry.ray_count();
    const int C = truth.channels();
    if (cfg.noise == NoiseKind::gaussian) {
        // Simplified measurement model: noisy line integrals, unit weights.
        sino = Sinogram(m, C);
        sino.logdata.resize(sino.counts.size());
        for (int c = 0; c < C; ++c) {
            auto path_int = A_fine.apply(truth_fine.channel(c));
            for (int i = 0; i < m; ++i) {
                SplitMix64 rng(hash_combine(
                    hash_combine(labeled_seed(cfg.seed, "gaussian"), i), 0x6e71ULL + c));
                sino.logdata[sino.index(i, c)] =
                    path_int[i] + cfg.gaussian_sigma * sample_normal(rng);
                sino.counts[sino.index(i, c)] = 1.0;
                sino.flux_per_bin[sino.index(i, c)] = 1.0;
            }
        }
    } else {
        NoiseModel nm = cfg.noise == NoiseKind::poisson ? NoiseModel::poisson
                                                        : NoiseModel::none;
        sino = simulate_counts(truth_fine, A_fine, model_fine, nm,
                               labeled_seed(cfg.seed, "poisson"));
        log_transform(sino);
    }
    std::vector<double> weights = cfg.noise == NoiseKind::gaussian
                                      ? std::vector<double>(sino.counts.size(), 1.0)
                                      : pwls_weights(sino);

    std::vector<std::string> files;
    atomic_write(out / "truth.msimg", [&](const std::string& p) { truth.save(p); });
    files.push_back("truth.msimg");
    atomic_write(out / "sinogram.mssin", [&](const std::string& p) { sino.save(p); });
    files.push_back("sinogram.mssin");
    atomic_write(out / "weights.bin", [&](const std::string& p) {
        save_weights(p, weights, m, C);
    });
    files.push_back("weights.bin");
    atomic_write(out / "operator.rayop", [&](const std::string& p) { A.save(p); });
    files.push_back("operator.rayop");
    atomic_write(out / "config.ini",
                 [&](const std::string& p) { cfg.to_kv().save(p); });
    files.push_back("config.ini");
    write_manifest(out, files);
    return exit_ok;
}

// Runs the configured solver on prepared channel data. Shared by reconstruct
// and bench.
inline SolveResult run_method(const std::string& method, const RayOperator& A,
                              const std::vector<std::vector<double>>& f,
                              const std::vector<std::vector<double>>& w,
                              const SolverConfig& solver) {
    if (method == "admm") return potts_admm(A, f, w, solver);
    if (method == "penalty") return penalty_method(A, f, w, solver);
    if (method == "scg") return potts_scg(A, f, w, solver);
    if (method == "s_landweber") return potts_s_landweber(A, f, w, solver);
    if (method == "cg_plain") return pwls_cg_plain(A, f, w, solver);
    if (method == "scg_basic_nonascending" || method == "scg_basic_prox") {
        auto strategy = method == "scg_basic_prox" ? PerturbStrategy::proximal
                                                   : PerturbStrategy::nonascending;
        auto blocks = superiorized_cg_basic(A, f, w, solver, strategy);
        SolveResult res;
        res.u = detail::block_mean(blocks.blocks);
        res.trace = std::move(blocks.trace);
        return res;
    }
    throw std::invalid_argument("unknown method: " + method);
}

inline int cmd_reconstruct(const ExperimentConfig& cfg,
                           const std::string& sinogram_path = "") {
    namespace fs = std::filesystem;
    using namespace cli_detail;
    cfg.validate();
    const fs::path out(cfg.output_dir);
    fs::create_directories(out);

    RayOperator A = RayOperator::load((out / "operator.rayop").string());
    std::string sino_file =
        sinogram_path.empty() ? (out / "sinogram.mssin").string() : sinogram_path;
    Sinogram sino = Sinogram::load(sino_file);
    if (sino.logdata.empty()) log_transform(sino);
    if (static_cast<std::size_t>(sino.rays) != A.rows())
        throw std::invalid_argument("reconstruct: sinogram ray count " +
                                    std::to_string(sino.rays) +
                                    " does not match operator rows " +
                                    std::to_string(A.rows()));

    std::vector<double> weights;
    if (fs::exists(out / "weights.bin")) {
        int wm = 0, wc = 0;
        weights = load_weights((out / "weights.bin").string(), wm, wc);
        if (wm != sino.rays || wc != sino.bins)
            throw std::invalid_argument("reconstruct: weights shape mismatch");
    } else {
        weights = pwls_weights(sino);
    }

    auto f = split_channels(sino.logdata, sino.rays, sino.bins);
    auto w = split_channels(weights, sino.rays, sino.bins);

    SolveResult res = run_method(cfg.method, A, f, w, cfg.solver);

    std::vector<std::string> files;
    atomic_write(out / "result.msimg", [&](const std::string& p) { res.u.save(p); });
    files.push_back("result.msimg");
    atomic_write(out / "trace.csv",
                 [&](const std::string& p) { res.trace.save_csv(p); });
    files.push_back("trace.csv");
    atomic_write(out / "solver_info.txt", [&](const std::string& p) {
        std::ofstream os(p, std::ios::binary);
        os << "method " << cfg.method << "\n";
        os << "converged " << (res.trace.converged ? 1 : 0) << "\n";
        os << "iterations "
           << (res.trace.records.empty() ? 0 : res.trace.records.back().iter)
           << "\n";
        if (cfg.method == "cg_plain" && !res.trace.records.empty()) {
            char buf[64];
            std::snprintf(buf, sizeof buf, "%.17g", res.trace.records.back().data_dev);
            os << "residual " << buf << "\n";
        }
    });
    files.push_back("solver_info.txt");

    // Refresh the manifest with everything currently present.
    for (const auto& entry : fs::directory_iterator(out)) {
        auto name = entry.path().filename().string();
        if (name != "manifest.txt" && entry.is_regular_file()) files.push_back(name);
    }
    write_manifest(out, files);
    return res.trace.converged ? exit_ok : exit_not_converged;
}

inline int cmd_evaluate(const std::string& result_path, const std::string& truth_path,
                        const std::string& out_dir) {
    namespace fs = std::filesystem;
    using namespace cli_detail;
    fs::create_directories(out_dir);
    const fs::path out(out_dir);

    MultiImage result = MultiImage::load(result_path);
    MultiImage truth = MultiImage::load(truth_path);
    if (!result.same_shape(truth))
        throw std::invalid_argument("evaluate: result and ground truth shapes differ");

    MetricReport report = evaluate(result, truth);
    std::vector<std::string> files;
    atomic_write(out / "metrics.csv",
                 [&](const std::string& p) { report.save_csv(p); });
    files.push_back("metrics.csv");

    for (int c = 0; c < result.channels(); ++c) {
        auto tc = truth.channel(c);
        double lo = *std::min_element(tc.begin(), tc.end());
        double hi = *std::max_element(tc.begin(), tc.end());
        std::string cname = "channel_" + std::to_string(c) + ".pgm";
        atomic_write(out / cname, [&](const std::string& p) {
            save_pgm(p, result.channel(c), result.side(), result.side(), lo, hi);
        });
        files.push_back(cname);
        std::vector<double> diff(result.pixels());
        auto rc = result.channel(c);
        for (std::size_t j = 0; j < diff.size(); ++j) diff[j] = std::abs(rc[j] - tc[j]);
        std::string dname = "diff_" + std::to_string(c) + ".pgm";
        atomic_write(out / dname, [&](const std::string& p) {
            save_pgm(p, diff, result.side(), result.side(), 0.0, hi - lo > 0 ? hi - lo : 1.0);
        });
        files.push_back(dname);
    }

    for (const auto& entry : fs::directory_iterator(out)) {
        auto name = entry.path().filename().string();
        if (name != "manifest.txt" && entry.is_regular_file()) files.push_back(name);
    }
    write_manifest(out, files);
    return exit_ok;
}

inline int cmd_bench(const ExperimentConfig& cfg) {
    namespace fs = std::filesystem;
    using namespace cli_detail;
    cfg.validate();
    if (cfg.bench_methods.size() < 2)
        throw std::invalid_argument("bench: at least two methods required");
    std::vector<std::string> methods;
    for (const auto& m : cfg.bench_methods) {
        if (std::find(methods.begin(), methods.end(), m) != methods.end()) {
            std::cerr << "bench: duplicate method '" << m << "' ignored\n";
            continue;
        }
        if (std::find(known_methods().begin(), known_methods().end(), m) ==
            known_methods().end())
            throw std::invalid_argument("bench: unknown method '" + m + "'");
        methods.push_back(m);
    }

    const fs::path out(cfg.output_dir);
    if (!fs::exists(out / "sinogram.mssin")) cmd_simulate(cfg);

    RayOperator A = RayOperator::load((out / "operator.rayop").string());
    Sinogram sino = Sinogram::load((out / "sinogram.mssin").string());
    if (sino.logdata.empty()) log_transform(sino);
    int wm = 0, wc = 0;
    auto weights = load_weights((out / "weights.bin").string(), wm, wc);
    MultiImage truth = MultiImage::load((out / "truth.msimg").string());
    auto f = split_channels(sino.logdata, sino.rays, sino.bins);
    auto w = split_channels(weights, sino.rays, sino.bins);

    struct Row {
        std::string method;
        MetricReport report;
    };
    std::vector<Row> rows;
    std::vector<std::string> files;
    for (const auto& method : methods) {
        SolveResult res = run_method(method, A, f, w, cfg.solver);
        atomic_write(out / ("result_" + method + ".msimg"),
                     [&](const std::string& p) { res.u.save(p); });
        files.push_back("result_" + method + ".msimg");
        atomic_write(out / ("trace_" + method + ".csv"),
                     [&](const std::string& p) { res.trace.save_csv(p); });
        files.push_back("trace_" + method + ".csv");
        rows.push_back({method, evaluate(res.u, truth)});
    }

    std::stable_sort(rows.begin(), rows.end(), [](const Row& a, const Row& b) {
        return a.report.mean_mssim() > b.report.mean_mssim();
    });
    atomic_write(out / "bench.csv", [&](const std::string& p) {
        std::ofstream os(p, std::ios::binary);
        os << "method";
        int C = rows.empty() ? 0 : static_cast<int>(rows[0].report.channels.size());
        for (int c = 0; c < C; ++c)
            os << ",rmse_" << c << ",mae_" << c << ",mssim_" << c;
        os << ",mean_mssim\n";
        char buf[64];
        for (const auto& row : rows) {
            os << row.method;
            for (const auto& ch : row.report.channels) {
                std::snprintf(buf, sizeof buf, ",%.17g,%.17g,%.17g", ch.rmse, ch.mae,
                              ch.mssim);
                os << buf;
            }
            std::snprintf(buf, sizeof buf, ",%.17g\n", row.report.mean_mssim());
            os << buf;
        }
    });
    files.push_back("bench.csv");

    for (const auto& entry : fs::directory_iterator(out)) {
        auto name = entry.path().filename().string();
        if (name != "manifest.txt" && entry.is_regular_file()) files.push_back(name);
    }
    write_manifest(out, files);
    return exit_ok;
}

}  // namespace mspotts
