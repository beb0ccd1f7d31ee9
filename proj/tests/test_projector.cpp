#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <random>

#include <mspotts/geometry.hpp>
#include <mspotts/ray_operator.hpp>

#include "oracle.hpp"

using namespace mspotts;

namespace {

Geometry parallel_geom(int n, int detectors, int angles, double width = 1.0) {
    Geometry g;
    g.mode = ScanMode::parallel;
    g.n = n;
    g.detectors = detectors;
    g.angles = angles;
    g.domain_width = width;
    g.detector_width = width;
    return g;
}

// Independent chord-length computation: clip the infinite ray against the
// centered square of the given width (Liang-Barsky style).
double square_chord(double px, double py, double dx, double dy, double width) {
    double half = width / 2.0;
    double tmin = -1e30, tmax = 1e30;
    double p[2] = {px, py}, d[2] = {dx, dy};
    for (int ax = 0; ax < 2; ++ax) {
        if (std::abs(d[ax]) < 1e-15) {
            if (p[ax] < -half || p[ax] > half) return 0.0;
            continue;
        }
        double t1 = (-half - p[ax]) / d[ax], t2 = (half - p[ax]) / d[ax];
        if (t1 > t2) std::swap(t1, t2);
        tmin = std::max(tmin, t1);
        tmax = std::min(tmax, t2);
    }
    return std::max(0.0, tmax - tmin);
}

}  // namespace

TEST_CASE("single pixel, single central ray") {
    auto A = build_operator(parallel_geom(1, 1, 1));
    REQUIRE(A.rows() == 1);
    REQUIRE(A.cols() == 1);
    REQUIRE(A.nnz() == 1);
    CHECK(A.col_idx()[0] == 0);
    CHECK(A.values()[0] == Catch::Approx(1.0).margin(1e-12));
}

TEST_CASE("seam ray splits the full chord across traversed pixels") {
    auto A = build_operator(parallel_geom(2, 1, 1));
    double row_sum = 0.0;
    for (double v : A.values()) row_sum += v;
    CHECK(row_sum == Catch::Approx(1.0).margin(1e-10));
}

TEST_CASE("rotation equivariance on a 4-fold symmetric parallel geometry") {
    auto A = build_operator(parallel_geom(2, 2, 2));
    REQUIRE(A.rows() == 4);
    REQUIRE(A.cols() == 4);

    std::vector<double> u = {1.0, 2.0, 3.0, 4.0};
    // 90-degree counterclockwise rotation of the 2x2 image (row-major,
    // y up through the geometric center).
    auto rot = [](const std::vector<double>& img) {
        std::vector<double> out(4);
        for (int y = 0; y < 2; ++y)
            for (int x = 0; x < 2; ++x) out[x * 2 + (1 - y)] = img[y * 2 + x];
        return out;
    };
    auto su = A.apply(u);
    auto sr = A.apply(rot(u));

    // The rotated image's sinogram must equal the original one with views
    // permuted (view 0 <-> view 1), possibly with reversed detector order.
    bool matched = false;
    for (int flip0 = 0; flip0 < 2 && !matched; ++flip0)
        for (int flip1 = 0; flip1 < 2 && !matched; ++flip1) {
            double err = 0.0;
            for (int d = 0; d < 2; ++d) {
                int d0 = flip0 ? 1 - d : d;
                int d1 = flip1 ? 1 - d : d;
                err = std::max(err, std::abs(sr[0 * 2 + d] - su[1 * 2 + d1]));
                err = std::max(err, std::abs(sr[1 * 2 + d] - su[0 * 2 + d0]));
            }
            if (err < 1e-10) matched = true;
        }
    CHECK(matched);
}

TEST_CASE("apply matches a dense product") {
    CHECK(build_operator(parallel_geom(2, 3, 4)).apply(std::vector<double>(4, 0.0)) ==
          std::vector<double>(12, 0.0));

    {
        RowBuilder b(1, 1);
        b.push(0, 1.0);
        b.end_row();
        auto A = b.finish();
        CHECK(A.apply(std::vector<double>{3.0})[0] == Catch::Approx(3.0));
    }

    std::mt19937 rng(11);
    for (int trial = 0; trial < 10; ++trial) {
        Eigen::MatrixXd M = oracle::random_matrix(rng, 5, 9);
        // Make it sparse-ish.
        for (int i = 0; i < 5; ++i)
            for (int j = 0; j < 9; ++j)
                if ((i + j + trial) % 3 == 0) M(i, j) = 0.0;
        auto A = oracle::sparsify(M);
        Eigen::VectorXd u = oracle::random_vector(rng, 9);
        std::vector<double> uv(u.data(), u.data() + 9);
        auto y = A.apply(uv);
        Eigen::VectorXd yd = M * u;
        for (int i = 0; i < 5; ++i) CHECK(y[i] == Catch::Approx(yd(i)).margin(1e-13));
    }
}

TEST_CASE("adjoint transposes exactly") {
    {
        auto A = build_operator(parallel_geom(2, 3, 4));
        CHECK(A.apply_adjoint(std::vector<double>(A.rows(), 0.0)) ==
              std::vector<double>(4, 0.0));
    }
    {
        RowBuilder b(3, 5);
        b.end_row();
        b.end_row();
        b.push(3, 0.5);
        b.end_row();
        auto A = b.finish();
        std::vector<double> y = {0.0, 0.0, 1.0};
        auto u = A.apply_adjoint(y);
        for (int j = 0; j < 5; ++j)
            CHECK(u[j] == Catch::Approx(j == 3 ? 0.5 : 0.0).margin(1e-15));
    }

    std::mt19937 rng(5);
    auto A = build_operator(parallel_geom(8, 12, 6));
    for (int trial = 0; trial < 100; ++trial) {
        Eigen::VectorXd ue = oracle::random_vector(rng, static_cast<int>(A.cols()));
        Eigen::VectorXd ye = oracle::random_vector(rng, static_cast<int>(A.rows()));
        std::vector<double> u(ue.data(), ue.data() + ue.size());
        std::vector<double> y(ye.data(), ye.data() + ye.size());
        auto Au = A.apply(u);
        auto Aty = A.apply_adjoint(y);
        double lhs = 0.0, rhs = 0.0;
        for (std::size_t i = 0; i < Au.size(); ++i) lhs += Au[i] * y[i];
        for (std::size_t j = 0; j < Aty.size(); ++j) rhs += Aty[j] * u[j];
        CHECK(std::abs(lhs - rhs) <= 1e-12 * (std::abs(lhs) + 1.0));
    }
}

TEST_CASE("operator norm estimate") {
    {
        RowBuilder b(1, 1);
        b.push(0, 2.0);
        b.end_row();
        CHECK(b.finish().operator_norm_sq(50) == Catch::Approx(4.0).margin(1e-9));
    }
    {
        RowBuilder b(2, 2);
        b.push(0, 1.0);
        b.end_row();
        b.push(1, 1.0);
        b.end_row();
        CHECK(b.finish().operator_norm_sq(50) == Catch::Approx(1.0).margin(1e-12));
    }
    {
        std::mt19937 rng(17);
        Eigen::MatrixXd M = oracle::random_matrix(rng, 6, 4);
        auto A = oracle::sparsify(M);
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(M.transpose() * M);
        double expected = es.eigenvalues().maxCoeff();
        CHECK(A.operator_norm_sq(200) ==
              Catch::Approx(expected).epsilon(1e-6));
    }
}

TEST_CASE("parallel rows conserve the geometric chord length") {
    for (int angles : {3, 5}) {
        Geometry g = parallel_geom(7, 9, angles, 2.0);
        auto A = build_operator(g);
        auto rp = A.row_ptr();
        auto vals = A.values();
        for (int v = 0; v < g.angles; ++v)
            for (int d = 0; d < g.detectors; ++d) {
                auto ray = detail::make_ray(g, v, d);
                double chord = square_chord(ray.px, ray.py, ray.dx, ray.dy,
                                            g.domain_width);
                std::size_t i = static_cast<std::size_t>(v) * g.detectors + d;
                double row_sum = 0.0;
                for (std::size_t k = rp[i]; k < rp[i + 1]; ++k) row_sum += vals[k];
                CHECK(row_sum == Catch::Approx(chord).margin(1e-10));
            }
    }
}

TEST_CASE("repeated builds are bit-identical") {
    Geometry g;
    g.mode = ScanMode::fan;
    g.n = 16;
    g.detectors = 24;
    g.angles = 10;
    g.domain_width = 2.0;
    g.source_to_center = 3.0;
    g.source_to_detector = 6.0;
    g.detector_width = 4.0;
    auto A = build_operator(g);
    auto B = build_operator(g);
    REQUIRE(A.nnz() == B.nnz());
    CHECK(std::equal(A.values().begin(), A.values().end(), B.values().begin()));
    CHECK(std::equal(A.col_idx().begin(), A.col_idx().end(), B.col_idx().begin()));
    CHECK(std::equal(A.row_ptr().begin(), A.row_ptr().end(), B.row_ptr().begin()));
}

TEST_CASE("degenerate fan geometry is rejected") {
    Geometry g;
    g.mode = ScanMode::fan;
    g.n = 8;
    g.detectors = 8;
    g.angles = 4;
    g.domain_width = 2.0;
    g.source_to_center = 1.0;  // inside the image square's circumradius
    g.source_to_detector = 5.0;
    g.detector_width = 4.0;
    CHECK_THROWS_AS(g.validate(), std::invalid_argument);
}

TEST_CASE("operator file round trip") {
    auto A = build_operator(parallel_geom(6, 8, 5));
    std::string path = "test_projector_roundtrip.rayop";
    A.save(path);
    auto B = RayOperator::load(path);
    std::remove(path.c_str());
    REQUIRE(B.rows() == A.rows());
    REQUIRE(B.cols() == A.cols());
    REQUIRE(B.nnz() == A.nnz());
    CHECK(std::equal(A.values().begin(), A.values().end(), B.values().begin()));
    CHECK(std::equal(A.col_idx().begin(), A.col_idx().end(), B.col_idx().begin()));
}
