#pragma once

#include <string>
#include <vector>

#include "mvsde/measure.hpp"
#include "mvsde/sim.hpp"

namespace mvsde {

// Point CSV: one row per particle, d coordinate columns, optional trailing
// weight column (detected when a header names it "w" or when requested).
struct PointCsv {
    std::size_t dim = 0;
    std::vector<double> points;
    std::vector<double> weights;  // empty = uniform
};

PointCsv read_point_csv(const std::string& path);
EmpiricalMeasure measure_from_csv(const std::string& path);
void write_point_csv(const std::string& path, const EmpiricalMeasure& mu,
                     bool with_weights = false);
void write_cloud_csv(const std::string& path, const PathBundle& bundle, std::size_t step);

// Increment stream: magic "MVSDE1", then little-endian u32 {steps, n, m},
// then steps*n*m little-endian doubles.
void write_increments(const std::string& path, const PathBundle& bundle);
struct IncrementsFile {
    std::uint32_t steps = 0, n = 0, m = 0;
    std::vector<double> data;
};
IncrementsFile read_increments(const std::string& path);

// fixed-format floating point for byte-stable CSV output
std::string format_double(double v);
void write_text_file(const std::string& path, const std::string& content);
std::string read_text_file(const std::string& path);

// FNV-1a, used for config hashes in manifests
std::uint64_t fnv1a(const std::string& s);

}  // namespace mvsde
