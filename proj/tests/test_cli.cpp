#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <mspotts/cli.hpp>
#include <mspotts/config.hpp>
#include <mspotts/image.hpp>
#include <mspotts/ray_operator.hpp>

namespace fs = std::filesystem;
using namespace mspotts;

namespace {

int run_cli(const std::string& args) {
    std::string cmd = std::string(MSPOTTS_CLI_PATH) + " " + args +
                      " >cli_stdout.log 2>cli_stderr.log";
    int rc = std::system(cmd.c_str());
#ifdef _WIN32
    return rc;
#else
    return (rc >= 256) ? rc >> 8 : rc;
#endif
}

fs::path scratch(const std::string& name) {
    fs::path dir = fs::current_path() / ("cli_scratch_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

void write_file(const fs::path& path, const std::string& text) {
    std::ofstream os(path, std::ios::binary);
    os << text;
}

std::string read_file(const fs::path& path) {
    std::ifstream is(path, std::ios::binary);
    REQUIRE(is.good());
    std::ostringstream buf;
    buf << is.rdbuf();
    return buf.str();
}

// Writes a 16x16 two-material file-based phantom with one energy per bin
// into dir, so tiny CLI problems stay within every contract.
void write_tiny_phantom(const fs::path& dir) {
    std::ostringstream labels;
    labels << "16\n";
    for (int y = 0; y < 16; ++y) {
        for (int x = 0; x < 16; ++x)
            labels << ((x > 3 && x < 12 && y > 3 && y < 12) ? (x < 8 ? 1 : 2) : 0)
                   << " ";
        labels << "\n";
    }
    write_file(dir / "labels.txt", labels.str());
    write_file(dir / "lac.txt",
               "30 10 2 2\n"
               "0 1\n1 2\n"
               "1000 800\n"
               "3\n"
               "air 0 0\n"
               "soft 0.5 0.3\n"
               "dense 1.0 0.8\n");
}

// A small well-determined parallel problem on the file-based phantom.
std::string base_config(const fs::path& out, const std::string& method,
                        const std::string& extra_solver = "",
                        const std::string& noise = "model = none\nseed = 3\n") {
    write_tiny_phantom(out);
    std::ostringstream os;
    os << "[phantom]\nlabels_file = " << (out / "labels.txt").string()
       << "\nlac_file = " << (out / "lac.txt").string() << "\nn = 16\n\n"
       << "[geometry]\nmode = parallel\ndetectors = 24\nangles = 14\n"
       << "domain_width_cm = 16\nsimulation_grid = 16\n\n"
       << "[noise]\n" << noise << "\n"
       << "[solver]\nmethod = " << method << "\n"
       << extra_solver << "\n"
       << "[output]\ndir = " << out.string() << "\n";
    return os.str();
}

}  // namespace

TEST_CASE("config text round-trips through parse and serialize") {
    std::string text =
        "[phantom]\nname = geocore_like\nn = 48\n\n[solver]\nmethod = scg\n"
        "beta0 = 0.5\n\n";
    auto kv = KVConfig::parse_text(text);
    auto again = KVConfig::parse_text(kv.serialize());
    CHECK(kv.serialize() == again.serialize());
    CHECK(kv == again);
    CHECK(kv.get("phantom", "name") == "geocore_like");
    CHECK(kv.get_double("solver", "beta0") == 0.5);

    SECTION("parse errors carry the line number") {
        try {
            KVConfig::parse_text("[a]\nx = 1\nbroken line\n");
            FAIL("expected a parse error");
        } catch (const std::invalid_argument& e) {
            CHECK(std::string(e.what()).find("line 3") != std::string::npos);
        }
    }
}

TEST_CASE("simulate is deterministic byte for byte") {
    auto dir1 = scratch("sim1");
    auto dir2 = scratch("sim2");
    for (const auto& dir : {dir1, dir2}) {
        std::ostringstream os;
        os << "[phantom]\nname = organic_spheres_like\nn = 64\n\n"
           << "[geometry]\nmode = parallel\ndetectors = 64\nangles = 12\n"
           << "domain_width_cm = 64\n\n"
           << "[noise]\nmodel = poisson\nseed = 7\n\n"
           << "[solver]\nmethod = admm\n\n"
           << "[output]\ndir = " << dir.string() << "\n";
        write_file(dir / "cfg.ini", os.str());
        REQUIRE(run_cli("simulate --config " + (dir / "cfg.ini").string()) == 0);
    }
    for (const char* name :
         {"truth.msimg", "sinogram.mssin", "weights.bin", "operator.rayop"})
        CHECK(read_file(dir1 / name) == read_file(dir2 / name));
    CHECK(cli_detail::verify_manifest(dir1));

    SECTION("manifest detects corruption") {
        std::ofstream os(dir1 / "weights.bin", std::ios::binary | std::ios::app);
        os << "tamper";
        os.close();
        CHECK_FALSE(cli_detail::verify_manifest(dir1));
    }
    fs::remove_all(dir1);
    fs::remove_all(dir2);
}

TEST_CASE("sinogram dimensions follow the geometry") {
    auto dir = scratch("dims");
    std::ostringstream os;
    os << "[phantom]\nname = shepp_logan_color\nn = 32\n\n"
       << "[geometry]\nmode = parallel\ndetectors = 96\nangles = 40\n"
       << "domain_width_cm = 32\nsimulation_grid = 32\n\n"
       << "[noise]\nmodel = none\n\n[solver]\nmethod = admm\n\n"
       << "[output]\ndir = " << dir.string() << "\n";
    write_file(dir / "cfg.ini", os.str());
    REQUIRE(run_cli("simulate --config " + (dir / "cfg.ini").string()) == 0);
    auto sino = Sinogram::load((dir / "sinogram.mssin").string());
    CHECK(sino.rays == 3840);
    CHECK(sino.bins == 3);
    fs::remove_all(dir);
}

TEST_CASE("noiseless single-energy simulation round-trips exactly") {
    auto dir = scratch("roundtrip");
    // File-based phantom: 8x8 labels, two grid energies, one per bin.
    std::ostringstream labels;
    labels << "8\n";
    for (int y = 0; y < 8; ++y) {
        for (int x = 0; x < 8; ++x)
            labels << ((x > 1 && x < 6 && y > 1 && y < 6) ? (x < 4 ? 1 : 2) : 0)
                   << " ";
        labels << "\n";
    }
    write_file(dir / "labels.txt", labels.str());
    write_file(dir / "lac.txt",
               "30 10 2 2\n"
               "0 1\n1 2\n"
               "1000 800\n"
               "3\n"
               "air 0 0\n"
               "soft 0.5 0.3\n"
               "dense 1.0 0.8\n");
    std::ostringstream os;
    os << "[phantom]\nlabels_file = " << (dir / "labels.txt").string()
       << "\nlac_file = " << (dir / "lac.txt").string() << "\nn = 8\n\n"
       << "[geometry]\nmode = parallel\ndetectors = 16\nangles = 10\n"
       << "domain_width_cm = 8\nsimulation_grid = 8\n\n"
       << "[noise]\nmodel = none\n\n[solver]\nmethod = admm\n\n"
       << "[output]\ndir = " << dir.string() << "\n";
    write_file(dir / "cfg.ini", os.str());
    REQUIRE(run_cli("simulate --config " + (dir / "cfg.ini").string()) == 0);

    auto truth = MultiImage::load((dir / "truth.msimg").string());
    auto A = RayOperator::load((dir / "operator.rayop").string());
    auto sino = Sinogram::load((dir / "sinogram.mssin").string());
    REQUIRE(truth.channels() == 2);
    for (int c = 0; c < 2; ++c) {
        auto au = A.apply(truth.channel(c));
        auto fc = sino.log_channel(c);
        for (std::size_t i = 0; i < au.size(); ++i)
            REQUIRE(std::abs(fc[i] - au[i]) <= 1e-10);
    }
    fs::remove_all(dir);
}

TEST_CASE("reconstruct writes results and reports convergence") {
    auto dir = scratch("recon");
    write_file(dir / "cfg.ini",
               base_config(dir, "cg_plain", "cg_tol = 1e-10\ncg_maxiter = 5000\n"));
    REQUIRE(run_cli("simulate --config " + (dir / "cfg.ini").string()) == 0);

    SECTION("plain CG reaches a tiny residual on a well-determined problem") {
        REQUIRE(run_cli("reconstruct --config " + (dir / "cfg.ini").string()) == 0);
        std::string info = read_file(dir / "solver_info.txt");
        CHECK(info.find("method cg_plain") != std::string::npos);
        CHECK(info.find("converged 1") != std::string::npos);
        auto pos = info.find("residual ");
        REQUIRE(pos != std::string::npos);
        double residual = std::stod(info.substr(pos + 9));
        CHECK(residual <= 1e-9);
        CHECK(cli_detail::verify_manifest(dir));
    }
    SECTION("splitting stop rule is echoed in the final trace row") {
        // Unit weights (gaussian model) keep the coupling schedule fast
        // enough to meet the tolerance within the iteration budget.
        write_file(dir / "cfg.ini",
                   base_config(dir, "admm",
                               "gamma = 0.01\ntol = 1e-2\nmax_outer = 4000\n",
                               "model = gaussian\ngaussian_sigma = 0.01\nseed = 3\n"));
        REQUIRE(run_cli("simulate --config " + (dir / "cfg.ini").string()) == 0);
        REQUIRE(run_cli("reconstruct --config " + (dir / "cfg.ini").string()) == 0);
        std::string trace = read_file(dir / "trace.csv");
        auto last_nl = trace.find_last_of('\n', trace.size() - 2);
        std::string last = trace.substr(last_nl + 1);
        // iter,data_dev,blockwise_potts,max_block_dist,wall_ms
        int commas = 0;
        std::size_t start = 0;
        double max_block_dist = -1.0;
        for (std::size_t i = 0; i <= last.size(); ++i)
            if (i == last.size() || last[i] == ',') {
                if (commas == 3) max_block_dist = std::stod(last.substr(start, i - start));
                ++commas;
                start = i + 1;
            }
        REQUIRE(max_block_dist >= 0.0);
        // At the stop, every split variable is within tol of the coupling
        // variable, so pairwise distances are below 2 * tol.
        CHECK(max_block_dist < 2e-2);
    }
    SECTION("vanishing perturbation reduces to the plain baseline") {
        REQUIRE(run_cli("reconstruct --config " + (dir / "cfg.ini").string()) == 0);
        fs::copy_file(dir / "result.msimg", dir / "baseline.msimg");
        write_file(dir / "cfg.ini",
                   base_config(dir, "scg",
                               "beta0 = 1e-12\nannealing = 0.999\nmu0 = 1e-8\n"
                               "tol = 1e-9\nmax_outer = 5000\n"));
        int rc = run_cli("reconstruct --config " + (dir / "cfg.ini").string());
        REQUIRE((rc == 0 || rc == 3));
        auto a = MultiImage::load((dir / "result.msimg").string());
        auto b = MultiImage::load((dir / "baseline.msimg").string());
        REQUIRE(a.same_shape(b));
        for (std::size_t j = 0; j < a.data().size(); ++j)
            REQUIRE(a.data()[j] == Catch::Approx(b.data()[j]).margin(1e-4));
    }
    fs::remove_all(dir);
}

TEST_CASE("evaluate emits metrics and renders") {
    auto dir = scratch("eval");
    write_file(dir / "cfg.ini", base_config(dir, "cg_plain"));
    REQUIRE(run_cli("simulate --config " + (dir / "cfg.ini").string()) == 0);

    SECTION("perfect reconstruction scores perfectly") {
        REQUIRE(run_cli("evaluate --result " + (dir / "truth.msimg").string() +
                        " --truth " + (dir / "truth.msimg").string() + " --out " +
                        (dir / "ev").string()) == 0);
        std::string csv = read_file(dir / "ev" / "metrics.csv");
        std::istringstream is(csv);
        std::string line;
        std::getline(is, line);
        REQUIRE(line == "channel,rmse,mae,mssim");
        int rows = 0;
        while (std::getline(is, line)) {
            if (line.empty()) continue;
            ++rows;
            // channel,0,0,1
            auto p1 = line.find(',');
            auto p2 = line.find(',', p1 + 1);
            auto p3 = line.find(',', p2 + 1);
            CHECK(std::stod(line.substr(p1 + 1, p2 - p1 - 1)) == 0.0);
            CHECK(std::stod(line.substr(p2 + 1, p3 - p2 - 1)) == 0.0);
            CHECK(std::stod(line.substr(p3 + 1)) == 1.0);
        }
        CHECK(rows == 2);
        CHECK(fs::exists(dir / "ev" / "channel_0.pgm"));
        CHECK(fs::exists(dir / "ev" / "diff_1.pgm"));
    }
    SECTION("constant offset maps to the documented scale") {
        auto truth = MultiImage::load((dir / "truth.msimg").string());
        auto shifted = truth;
        for (double& v : shifted.data()) v += 0.01;
        shifted.save((dir / "shifted.msimg").string());
        REQUIRE(run_cli("evaluate --result " + (dir / "shifted.msimg").string() +
                        " --truth " + (dir / "truth.msimg").string() + " --out " +
                        (dir / "ev2").string()) == 0);
        std::string csv = read_file(dir / "ev2" / "metrics.csv");
        std::istringstream is(csv);
        std::string line;
        std::getline(is, line);
        std::getline(is, line);
        auto p1 = line.find(',');
        auto p2 = line.find(',', p1 + 1);
        CHECK(std::stod(line.substr(p1 + 1, p2 - p1 - 1)) ==
              Catch::Approx(1.0).margin(1e-9));
        // CLI output equals the direct library call.
        auto report = evaluate(shifted, truth);
        CHECK(std::stod(line.substr(p1 + 1, p2 - p1 - 1)) ==
              Catch::Approx(report.channels[0].rmse).margin(1e-12));
    }
    SECTION("shape mismatch is a configuration error") {
        MultiImage wrong(4, 3);
        wrong.save((dir / "wrong.msimg").string());
        CHECK(run_cli("evaluate --result " + (dir / "wrong.msimg").string() +
                      " --truth " + (dir / "truth.msimg").string() + " --out " +
                      (dir / "ev3").string()) == 2);
    }
    fs::remove_all(dir);
}

TEST_CASE("bench compares methods on shared inputs") {
    auto dir = scratch("bench");
    std::string cfg_text =
        base_config(dir, "admm",
                    "gamma = 0.05\ntol = 1e-4\nmax_outer = 600\ncg_maxiter = 300\n",
                    "model = gaussian\ngaussian_sigma = 0.3\nseed = 5\n");
    cfg_text += "\n[bench]\nmethods = admm, penalty, admm\n";
    write_file(dir / "cfg.ini", cfg_text);

    REQUIRE(run_cli("bench --config " + (dir / "cfg.ini").string()) == 0);
    std::string warn = read_file(fs::current_path() / "cli_stderr.log");
    CHECK(warn.find("duplicate method") != std::string::npos);

    std::string table = read_file(dir / "bench.csv");
    std::istringstream is(table);
    std::string header;
    std::getline(is, header);
    CHECK(header.find("method,rmse_0") == 0);
    CHECK(header.find("mean_mssim") != std::string::npos);
    std::vector<std::string> names;
    std::vector<double> mean_mssim;
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        names.push_back(line.substr(0, line.find(',')));
        mean_mssim.push_back(std::stod(line.substr(line.find_last_of(',') + 1)));
    }
    REQUIRE(names.size() == 2);  // duplicate removed
    CHECK(std::find(names.begin(), names.end(), "admm") != names.end());
    CHECK(std::find(names.begin(), names.end(), "penalty") != names.end());
    for (std::size_t i = 0; i + 1 < mean_mssim.size(); ++i)
        CHECK(mean_mssim[i] >= mean_mssim[i + 1]);  // sorted descending
    CHECK(fs::exists(dir / "result_admm.msimg"));
    CHECK(fs::exists(dir / "trace_penalty.csv"));

    SECTION("rerun with the same seed reproduces the table") {
        std::string first = table;
        REQUIRE(run_cli("bench --config " + (dir / "cfg.ini").string()) == 0);
        CHECK(read_file(dir / "bench.csv") == first);
    }
    SECTION("unknown method aborts with a configuration error") {
        std::string cfg = cfg_text;
        auto pos = cfg.find("admm, penalty, admm");
        cfg.replace(pos, 19, "admm, warp_drive");
        write_file(dir / "bad.ini", cfg);
        CHECK(run_cli("bench --config " + (dir / "bad.ini").string()) == 2);
    }
    fs::remove_all(dir);
}

TEST_CASE("configuration errors use a distinct exit code") {
    auto dir = scratch("cfgerr");
    SECTION("unknown solver method") {
        write_file(dir / "cfg.ini", base_config(dir, "warp_drive"));
        CHECK(run_cli("simulate --config " + (dir / "cfg.ini").string()) == 2);
    }
    SECTION("malformed config line") {
        write_file(dir / "cfg.ini", "[phantom]\nbroken\n");
        CHECK(run_cli("simulate --config " + (dir / "cfg.ini").string()) == 2);
    }
    SECTION("seed flag overrides the config") {
        write_file(dir / "cfg.ini",
                   base_config(dir, "cg_plain").replace(0, 0, ""));
        REQUIRE(run_cli("simulate --config " + (dir / "cfg.ini").string() +
                        " --seed 9") == 0);
        auto cfg = KVConfig::load((dir / "config.ini").string());
        CHECK(cfg.get("noise", "seed") == "9");
    }
    fs::remove_all(dir);
}
