#pragma once

#include <algorithm>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace mspotts {

namespace detail {

inline void write_u64(std::ostream& os, std::uint64_t v) {
    unsigned char buf[8];
    for (int i = 0; i < 8; ++i) buf[i] = static_cast<unsigned char>(v >> (8 * i));
    os.write(reinterpret_cast<const char*>(buf), 8);
}

inline std::uint64_t read_u64(std::istream& is) {
    unsigned char buf[8];
    is.read(reinterpret_cast<char*>(buf), 8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
    return v;
}

inline void write_f64(std::ostream& os, double d) {
    std::uint64_t bits;
    std::memcpy(&bits, &d, 8);
    write_u64(os, bits);
}

inline double read_f64(std::istream& is) {
    std::uint64_t bits = read_u64(is);
    double d;
    std::memcpy(&d, &bits, 8);
    return d;
}

inline void expect_magic(std::istream& is, const char* magic) {
    char buf[8] = {};
    std::size_t len = std::strlen(magic);
    is.read(buf, static_cast<std::streamsize>(len));
    if (!is || std::memcmp(buf, magic, len) != 0)
        throw std::runtime_error(std::string("bad file magic, expected ") + magic);
}

}  // namespace detail

// n x n x C image of linear attenuation coefficients, channel-major storage.
class MultiImage {
  public:
    MultiImage() = default;
    MultiImage(int n, int channels, double fill = 0.0)
        : n_(n), channels_(channels),
          values_(static_cast<std::size_t>(n) * n * channels, fill) {}

    int side() const { return n_; }
    int channels() const { return channels_; }
    std::size_t pixels() const { return static_cast<std::size_t>(n_) * n_; }
    std::size_t size() const { return values_.size(); }

    double& at(int x, int y, int c) { return values_[plane(c) + idx(x, y)]; }
    double at(int x, int y, int c) const { return values_[plane(c) + idx(x, y)]; }

    std::span<double> channel(int c) { return {values_.data() + plane(c), pixels()}; }
    std::span<const double> channel(int c) const {
        return {values_.data() + plane(c), pixels()};
    }

    std::vector<double>& data() { return values_; }
    const std::vector<double>& data() const { return values_; }

    bool same_shape(const MultiImage& other) const {
        return n_ == other.n_ && channels_ == other.channels_;
    }

    void save(const std::string& path) const {
        std::ofstream os(path, std::ios::binary);
        if (!os) throw std::runtime_error("cannot open for writing: " + path);
        os.write("MSIMG1", 6);
        detail::write_u64(os, static_cast<std::uint64_t>(n_));
        detail::write_u64(os, static_cast<std::uint64_t>(n_));
        detail::write_u64(os, static_cast<std::uint64_t>(channels_));
        for (double v : values_) detail::write_f64(os, v);
    }

    static MultiImage load(const std::string& path) {
        std::ifstream is(path, std::ios::binary);
        if (!is) throw std::runtime_error("cannot open: " + path);
        detail::expect_magic(is, "MSIMG1");
        auto rows = detail::read_u64(is);
        auto cols = detail::read_u64(is);
        auto ch = detail::read_u64(is);
        if (rows != cols) throw std::runtime_error("non-square image in " + path);
        MultiImage img(static_cast<int>(rows), static_cast<int>(ch));
        for (double& v : img.values_) v = detail::read_f64(is);
        if (!is) throw std::runtime_error("truncated image file: " + path);
        return img;
    }

  private:
    std::size_t idx(int x, int y) const {
        return static_cast<std::size_t>(y) * n_ + x;
    }
    std::size_t plane(int c) const { return static_cast<std::size_t>(c) * pixels(); }

    int n_ = 0;
    int channels_ = 0;
    std::vector<double> values_;
};

// m x C multi-spectral measurements: raw photon counts, log-transformed data
// and the per-(ray, bin) reference flux used by the log transform.
struct Sinogram {
    int rays = 0;
    int bins = 0;
    std::vector<double> counts;        // rays x bins, row-major
    std::vector<double> logdata;       // rays x bins, empty until log_transform
    std::vector<double> flux_per_bin;  // rays x bins

    Sinogram() = default;
    Sinogram(int m, int c)
        : rays(m), bins(c),
          counts(static_cast<std::size_t>(m) * c, 0.0),
          flux_per_bin(static_cast<std::size_t>(m) * c, 0.0) {}

    std::size_t index(int ray, int bin) const {
        return static_cast<std::size_t>(ray) * bins + bin;
    }

    // Channel c of the log data as a contiguous vector of length m.
    std::vector<double> log_channel(int c) const {
        std::vector<double> out(rays);
        for (int i = 0; i < rays; ++i) out[i] = logdata[index(i, c)];
        return out;
    }

    void save(const std::string& path) const {
        std::ofstream os(path, std::ios::binary);
        if (!os) throw std::runtime_error("cannot open for writing: " + path);
        os.write("MSSIN1", 6);
        detail::write_u64(os, static_cast<std::uint64_t>(rays));
        detail::write_u64(os, static_cast<std::uint64_t>(bins));
        detail::write_u64(os, logdata.empty() ? 0 : 1);
        for (double v : counts) detail::write_f64(os, v);
        for (double v : flux_per_bin) detail::write_f64(os, v);
        for (double v : logdata) detail::write_f64(os, v);
    }

    static Sinogram load(const std::string& path) {
        std::ifstream is(path, std::ios::binary);
        if (!is) throw std::runtime_error("cannot open: " + path);
        detail::expect_magic(is, "MSSIN1");
        auto m = detail::read_u64(is);
        auto c = detail::read_u64(is);
        auto has_log = detail::read_u64(is);
        Sinogram sino(static_cast<int>(m), static_cast<int>(c));
        for (double& v : sino.counts) v = detail::read_f64(is);
        for (double& v : sino.flux_per_bin) v = detail::read_f64(is);
        if (has_log) {
            sino.logdata.resize(sino.counts.size());
            for (double& v : sino.logdata) v = detail::read_f64(is);
        }
        if (!is) throw std::runtime_error("truncated sinogram file: " + path);
        return sino;
    }
};

// 8-bit PGM render with linear scaling between lo and hi.
inline void save_pgm(const std::string& path, std::span<const double> values,
                     int width, int height, double lo, double hi) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open for writing: " + path);
    os << "P5\n" << width << " " << height << "\n255\n";
    double range = hi > lo ? hi - lo : 1.0;
    for (std::size_t i = 0; i < values.size(); ++i) {
        double t = (values[i] - lo) / range;
        int g = static_cast<int>(std::clamp(t, 0.0, 1.0) * 255.0 + 0.5);
        os.put(static_cast<char>(g));
    }
}

}  // namespace mspotts
