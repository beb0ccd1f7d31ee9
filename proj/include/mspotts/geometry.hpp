#pragma once

#include <cmath>
#include <stdexcept>
#include <string>

namespace mspotts {

enum class ScanMode { parallel, fan };

// Scanning geometry. Angles are equally spaced over [0, pi) for parallel
// beams and [0, 2*pi) for fan beams; rays are enumerated view-major, then
// detector-major. The fan-beam detector is a flat equispaced array centered
// on the source-center axis.
struct Geometry {
    ScanMode mode = ScanMode::parallel;
    int n = 0;               // image is n x n
    int detectors = 0;       // detector elements per view
    int angles = 0;          // number of views
    double domain_width = 1.0;       // physical width of the image square (cm)
    double source_to_center = 0.0;   // fan only (cm)
    double source_to_detector = 0.0; // fan only (cm)
    double detector_width = 1.0;     // physical width of the detector array (cm)

    int ray_count() const { return detectors * angles; }

    void validate() const {
        if (n < 1 || detectors < 1 || angles < 1)
            throw std::invalid_argument("geometry: n, detectors, angles must be >= 1");
        if (domain_width <= 0.0 || detector_width <= 0.0)
            throw std::invalid_argument("geometry: widths must be positive");
        if (mode == ScanMode::fan) {
            if (source_to_center <= 0.0 || source_to_detector <= 0.0)
                throw std::invalid_argument("geometry: fan distances must be positive");
            if (source_to_detector <= source_to_center)
                throw std::invalid_argument(
                    "geometry: source_to_detector must exceed source_to_center");
            // The source must stay outside the image square for every view.
            if (source_to_center <= domain_width * std::sqrt(2.0) / 2.0)
                throw std::invalid_argument(
                    "geometry: fan source would enter the image square");
        }
    }
};

}  // namespace mspotts
