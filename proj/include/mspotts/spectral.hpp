#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "image.hpp"
#include "parallel.hpp"
#include "ray_operator.hpp"
#include "rng.hpp"

namespace mspotts {

struct Material {
    std::string name;
    std::vector<double> lac;  // per grid energy, 1/cm
};

struct EnergyBin {
    int begin = 0;  // grid index range [begin, end)
    int end = 0;
};

// Energy grid, source flux, detector bins and material attenuation curves.
struct SpectralModel {
    double energy_start = 0.0;  // keV of grid index 0
    double energy_step = 1.0;   // keV
    std::vector<double> flux;       // I0 per grid energy (photons)
    std::vector<EnergyBin> bins;    // disjoint, ordered, covering the grid
    std::vector<Material> materials;  // index 0 is air (LAC == 0)

    int grid_size() const { return static_cast<int>(flux.size()); }
    int bin_count() const { return static_cast<int>(bins.size()); }

    // Representative energy of a bin: its left endpoint.
    double bin_energy(int c) const { return energy_start + bins[c].begin * energy_step; }

    void validate() const {
        if (flux.empty() || bins.empty() || materials.empty())
            throw std::invalid_argument("spectral model: empty component");
        int cursor = 0;
        for (const auto& b : bins) {
            if (b.begin != cursor || b.end <= b.begin)
                throw std::invalid_argument("spectral model: bins must be ordered and cover the grid");
            cursor = b.end;
        }
        if (cursor != grid_size())
            throw std::invalid_argument("spectral model: bins must cover the grid");
        for (double v : flux)
            if (v < 0.0) throw std::invalid_argument("spectral model: negative flux");
        for (const auto& m : materials) {
            if (m.lac.size() != flux.size())
                throw std::invalid_argument("spectral model: LAC grid mismatch");
            for (double v : m.lac)
                if (v < 0.0) throw std::invalid_argument("spectral model: negative LAC");
        }
    }
};

// Integer material map; label 0 is the air background.
struct Phantom {
    int n = 0;
    std::vector<int> labels;  // n x n, row-major

    int label(int x, int y) const { return labels[static_cast<std::size_t>(y) * n + x]; }
};

enum class NoiseModel { none, poisson };

// Channel c of the ground truth holds each pixel's material LAC evaluated at
// the bin's representative energy.
inline MultiImage make_multichannel_ground_truth(const Phantom& phantom,
                                                 const SpectralModel& model) {
    model.validate();
    const int C = model.bin_count();
    MultiImage img(phantom.n, C);
    for (int c = 0; c < C; ++c) {
        auto plane = img.channel(c);
        int rep = model.bins[c].begin;
        for (std::size_t j = 0; j < phantom.labels.size(); ++j) {
            int mat = phantom.labels[j];
            if (mat < 0 || mat >= static_cast<int>(model.materials.size()))
                throw std::invalid_argument("phantom references unknown material " +
                                            std::to_string(mat));
            plane[j] = model.materials[mat].lac[rep];
        }
    }
    return img;
}

namespace detail {

// u(j, eps) reconstructed from the C channel values by linear interpolation
// over the bin representative energies (constant beyond the endpoints).
struct ChannelInterpolator {
    std::vector<double> energies;

    explicit ChannelInterpolator(const SpectralModel& model) {
        energies.reserve(model.bin_count());
        for (int c = 0; c < model.bin_count(); ++c)
            energies.push_back(model.bin_energy(c));
    }

    double operator()(const std::vector<double>& per_channel, double energy) const {
        const int C = static_cast<int>(energies.size());
        if (C == 1 || energy <= energies.front()) return per_channel.front();
        if (energy >= energies.back()) return per_channel.back();
        int hi = 1;
        while (energies[hi] < energy) ++hi;
        double t = (energy - energies[hi - 1]) / (energies[hi] - energies[hi - 1]);
        return (1.0 - t) * per_channel[hi - 1] + t * per_channel[hi];
    }
};

}  // namespace detail

// Expected photon counts per ray and bin: for every grid energy, the source
// flux attenuated by exp(-path integral of u at that energy), summed over
// the bin. Poisson noise draws one count per (ray, bin) from a stream keyed
// by (seed, ray, bin), so parallel and serial runs agree bit-exactly.
inline Sinogram simulate_counts(const MultiImage& u_fine, const RayOperator& a_fine,
                                const SpectralModel& model, NoiseModel noise,
                                std::uint64_t seed = 0) {
    model.validate();
    if (a_fine.cols() != u_fine.pixels())
        throw std::invalid_argument("simulate_counts: operator/image grid mismatch");
    if (u_fine.channels() != model.bin_count())
        throw std::invalid_argument("simulate_counts: channel count mismatch");
    for (double v : u_fine.data())
        if (v < 0.0) throw std::domain_error("simulate_counts: negative LAC in image");

    const int m = static_cast<int>(a_fine.rows());
    const int C = model.bin_count();
    Sinogram sino(m, C);

    // Per-channel path integrals A u_c for all rays.
    std::vector<std::vector<double>> path(C);
    for (int c = 0; c < C; ++c) path[c] = a_fine.apply(u_fine.channel(c));

    detail::ChannelInterpolator interp(model);
    parallel_for(static_cast<std::size_t>(m), [&](std::size_t i) {
        std::vector<double> per_channel(C);
        for (int c = 0; c < C; ++c) per_channel[c] = path[c][i];
        for (int c = 0; c < C; ++c) {
            double expected = 0.0;
            for (int e = model.bins[c].begin; e < model.bins[c].end; ++e) {
                double energy = model.energy_start + e * model.energy_step;
                expected += model.flux[e] * std::exp(-interp(per_channel, energy));
            }
            double value = expected;
            if (noise == NoiseModel::poisson) {
                SplitMix64 rng(hash_combine(hash_combine(seed, i), 0x5151ULL + c));
                value = static_cast<double>(sample_poisson(expected, rng));
            }
            sino.counts[sino.index(static_cast<int>(i), c)] = value;
            // Reference flux of the simplified single-energy model: the flux
            // at the bin's representative energy times the bin width in grid
            // steps.
            sino.flux_per_bin[sino.index(static_cast<int>(i), c)] =
                model.flux[model.bins[c].begin] * (model.bins[c].end - model.bins[c].begin);
        }
    });
    return sino;
}

// Fills logdata with f = -log(max(Y, 1) / I0_ref). Zero counts are clamped
// to one photon to keep the log data finite.
inline void log_transform(Sinogram& sino) {
    if (sino.counts.empty() || sino.flux_per_bin.empty())
        throw std::invalid_argument("log_transform: counts or flux missing");
    sino.logdata.resize(sino.counts.size());
    for (std::size_t k = 0; k < sino.counts.size(); ++k) {
        if (sino.flux_per_bin[k] <= 0.0)
            throw std::invalid_argument("log_transform: nonpositive flux reference");
        sino.logdata[k] = -std::log(std::max(sino.counts[k], 1.0) / sino.flux_per_bin[k]);
    }
}

// PWLS weights: the number of detected photons, floored at one.
inline std::vector<double> pwls_weights(const Sinogram& sino) {
    std::vector<double> w(sino.counts.size());
    for (std::size_t k = 0; k < w.size(); ++k) w[k] = std::max(sino.counts[k], 1.0);
    return w;
}

// ---------------------------------------------------------------------------
// Built-in phantoms with synthetic spectra and LAC curves.

namespace detail {

// Bremsstrahlung-like flux: rises from the low cutoff, peaks, and decays
// linearly to zero at the tube potential.
inline std::vector<double> synthetic_flux(double e_start, double e_step, int count,
                                          double tube_kvp, double peak_flux) {
    std::vector<double> flux(count);
    double peak = 0.0;
    for (int i = 0; i < count; ++i) {
        double e = e_start + i * e_step;
        double v = std::max(0.0, (e - 10.0)) * std::max(0.0, tube_kvp - e);
        flux[i] = v;
        peak = std::max(peak, v);
    }
    if (peak > 0.0)
        for (double& v : flux) v *= peak_flux / peak;
    return flux;
}

// Smooth decreasing LAC: photoelectric-like falloff plus a Compton floor.
inline std::vector<double> synthetic_lac(double e_start, double e_step, int count,
                                         double photo, double floor) {
    std::vector<double> lac(count);
    for (int i = 0; i < count; ++i) {
        double e = e_start + i * e_step;
        double r = 30.0 / e;
        lac[i] = photo * r * r * r + floor;
    }
    return lac;
}

inline void fill_disc(Phantom& ph, double cx, double cy, double r, int label) {
    // centers and radii in units of the side length
    for (int y = 0; y < ph.n; ++y) {
        for (int x = 0; x < ph.n; ++x) {
            double px = (x + 0.5) / ph.n - cx;
            double py = (y + 0.5) / ph.n - cy;
            if (px * px + py * py <= r * r)
                ph.labels[static_cast<std::size_t>(y) * ph.n + x] = label;
        }
    }
}

inline void fill_ellipse(Phantom& ph, double cx, double cy, double ra, double rb,
                         double angle, int label) {
    double ca = std::cos(angle), sa = std::sin(angle);
    for (int y = 0; y < ph.n; ++y) {
        for (int x = 0; x < ph.n; ++x) {
            double px = (x + 0.5) / ph.n - cx;
            double py = (y + 0.5) / ph.n - cy;
            double ex = (ca * px + sa * py) / ra;
            double ey = (-sa * px + ca * py) / rb;
            if (ex * ex + ey * ey <= 1.0)
                ph.labels[static_cast<std::size_t>(y) * ph.n + x] = label;
        }
    }
}

}  // namespace detail

// Deterministic phantom/spectrum pairs standing in for measured spectra and
// tabulated attenuation data. All three use C = 3 detector bins.
inline std::pair<Phantom, SpectralModel> builtin_phantom(const std::string& name, int n) {
    if (n < 32) throw std::invalid_argument("builtin_phantom: n >= 32 required");
    Phantom ph;
    ph.n = n;
    ph.labels.assign(static_cast<std::size_t>(n) * n, 0);

    SpectralModel model;
    model.energy_start = 20.0;
    model.energy_step = 1.0;
    const int grid = 99;  // 20..118 keV
    model.bins = {{0, 33}, {33, 66}, {66, grid}};

    auto lac = [&](double photo, double floor) {
        return detail::synthetic_lac(model.energy_start, model.energy_step, grid, photo,
                                     floor);
    };
    model.materials.push_back({"air", std::vector<double>(grid, 0.0)});

    if (name == "organic_spheres_like") {
        // Three tissues; fat and muscle stay close at high energies.
        model.flux = detail::synthetic_flux(model.energy_start, model.energy_step, grid,
                                            150.0, 1.0e5);
        model.materials.push_back({"muscle", lac(0.32, 0.180)});
        model.materials.push_back({"fat", lac(0.24, 0.168)});
        model.materials.push_back({"bone", lac(2.10, 0.300)});
        detail::fill_disc(ph, 0.32, 0.30, 0.14, 1);
        detail::fill_disc(ph, 0.68, 0.28, 0.10, 2);
        detail::fill_disc(ph, 0.30, 0.68, 0.09, 2);
        detail::fill_disc(ph, 0.66, 0.66, 0.13, 3);
        detail::fill_disc(ph, 0.50, 0.48, 0.06, 1);
    } else if (name == "geocore_like") {
        // Quartz core with three mineral inclusions.
        model.flux = detail::synthetic_flux(model.energy_start, model.energy_step, grid,
                                            120.0, 4.0e4);
        model.materials.push_back({"quartz", lac(0.55, 0.20)});
        model.materials.push_back({"pyrite", lac(2.60, 0.42)});
        model.materials.push_back({"galena", lac(5.10, 0.80)});
        model.materials.push_back({"gold", lac(7.80, 1.30)});
        detail::fill_disc(ph, 0.50, 0.50, 0.42, 1);
        detail::fill_disc(ph, 0.36, 0.40, 0.09, 2);
        detail::fill_disc(ph, 0.62, 0.36, 0.07, 3);
        detail::fill_disc(ph, 0.56, 0.64, 0.08, 4);
        detail::fill_disc(ph, 0.38, 0.64, 0.05, 2);
    } else if (name == "shepp_logan_color") {
        model.flux = detail::synthetic_flux(model.energy_start, model.energy_step, grid,
                                            120.0, 4.0e4);
        model.materials.push_back({"shell", lac(0.80, 0.30)});
        model.materials.push_back({"interior", lac(0.40, 0.15)});
        model.materials.push_back({"inclusion", lac(1.40, 0.50)});
        detail::fill_ellipse(ph, 0.50, 0.50, 0.36, 0.46, 0.0, 1);
        detail::fill_ellipse(ph, 0.50, 0.50, 0.30, 0.40, 0.0, 2);
        detail::fill_ellipse(ph, 0.40, 0.42, 0.07, 0.11, 0.3, 3);
        detail::fill_ellipse(ph, 0.60, 0.42, 0.07, 0.11, -0.3, 3);
        detail::fill_ellipse(ph, 0.50, 0.68, 0.10, 0.06, 0.0, 1);
    } else {
        throw std::invalid_argument("unknown builtin phantom: " + name);
    }
    model.validate();
    return {std::move(ph), std::move(model)};
}

// Label map render for inspection.
inline void save_phantom_pgm(const Phantom& ph, const std::string& path) {
    std::vector<double> v(ph.labels.begin(), ph.labels.end());
    int max_label = 0;
    for (int l : ph.labels) max_label = std::max(max_label, l);
    save_pgm(path, v, ph.n, ph.n, 0.0, std::max(1, max_label));
}

}  // namespace mspotts
