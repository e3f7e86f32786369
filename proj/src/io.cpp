#include "mvsde/io.hpp"

#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

namespace mvsde {

std::string format_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

void write_text_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) fail("RuntimeFailure", "cannot open for writing: " + path);
    out << content;
}

std::string read_text_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail("RuntimeFailure", "cannot open: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::uint64_t fnv1a(const std::string& s) {
    std::uint64_t h = 0xCBF29CE484222325ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001B3ull;
    }
    return h;
}

PointCsv read_point_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) fail("RuntimeFailure", "cannot open: " + path);
    PointCsv out;
    std::string line;
    bool weight_col = false;
    std::vector<std::vector<double>> rows;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        if (line[0] == '#') continue;
        // header line: any non-numeric first token
        std::stringstream ss(line);
        std::string tok;
        std::vector<std::string> toks;
        while (std::getline(ss, tok, ',')) toks.push_back(tok);
        char* endp = nullptr;
        std::strtod(toks[0].c_str(), &endp);
        if (endp == toks[0].c_str()) {
            weight_col = !toks.empty() && (toks.back() == "w" || toks.back() == "weight");
            continue;
        }
        std::vector<double> row;
        for (const auto& t : toks) row.push_back(std::strtod(t.c_str(), nullptr));
        rows.push_back(std::move(row));
    }
    if (rows.empty()) fail("RuntimeFailure", "empty point csv: " + path);
    const std::size_t cols = rows[0].size();
    for (const auto& r : rows)
        if (r.size() != cols) fail("RuntimeFailure", "ragged point csv: " + path);
    out.dim = weight_col ? cols - 1 : cols;
    for (const auto& r : rows) {
        for (std::size_t c = 0; c < out.dim; ++c) out.points.push_back(r[c]);
        if (weight_col) out.weights.push_back(r.back());
    }
    return out;
}

EmpiricalMeasure measure_from_csv(const std::string& path) {
    auto csv = read_point_csv(path);
    return EmpiricalMeasure(std::move(csv.points), csv.dim, std::move(csv.weights));
}

void write_point_csv(const std::string& path, const EmpiricalMeasure& mu, bool with_weights) {
    std::ostringstream out;
    for (std::size_t c = 0; c < mu.dim(); ++c) out << (c ? ",x" : "x") << c;
    if (with_weights) out << ",w";
    out << "\n";
    for (std::size_t i = 0; i < mu.size(); ++i) {
        const auto p = mu.point(i);
        for (std::size_t c = 0; c < mu.dim(); ++c) {
            if (c) out << ',';
            out << format_double(p[c]);
        }
        if (with_weights) out << ',' << format_double(mu.weight(i));
        out << "\n";
    }
    write_text_file(path, out.str());
}

void write_cloud_csv(const std::string& path, const PathBundle& bundle, std::size_t step) {
    std::ostringstream out;
    for (std::size_t c = 0; c < bundle.d; ++c) out << (c ? ",x" : "x") << c;
    out << "\n";
    for (std::size_t i = 0; i < bundle.n; ++i) {
        const auto p = bundle.state(step, i);
        for (std::size_t c = 0; c < bundle.d; ++c) {
            if (c) out << ',';
            out << format_double(p[c]);
        }
        out << "\n";
    }
    write_text_file(path, out.str());
}

namespace {

void put_u32_le(std::string& s, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) s.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

std::uint32_t get_u32_le(const unsigned char* p) {
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

}  // namespace

void write_increments(const std::string& path, const PathBundle& bundle) {
    if (!bundle.has_increments()) fail("MissingIncrements", "bundle stored no increments");
    std::string header = "MVSDE1";
    put_u32_le(header, static_cast<std::uint32_t>(bundle.steps()));
    put_u32_le(header, static_cast<std::uint32_t>(bundle.n));
    put_u32_le(header, static_cast<std::uint32_t>(bundle.m));
    std::ofstream out(path, std::ios::binary);
    if (!out) fail("RuntimeFailure", "cannot open for writing: " + path);
    out.write(header.data(), static_cast<std::streamsize>(header.size()));
    static_assert(sizeof(double) == 8);
    // doubles written natively; all supported targets are little-endian
    out.write(reinterpret_cast<const char*>(bundle.increments.data()),
              static_cast<std::streamsize>(bundle.increments.size() * sizeof(double)));
}

IncrementsFile read_increments(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail("RuntimeFailure", "cannot open: " + path);
    char magic[6];
    in.read(magic, 6);
    if (in.gcount() != 6 || std::memcmp(magic, "MVSDE1", 6) != 0)
        fail("RuntimeFailure", "bad increments magic in " + path);
    unsigned char dims[12];
    in.read(reinterpret_cast<char*>(dims), 12);
    IncrementsFile f;
    f.steps = get_u32_le(dims);
    f.n = get_u32_le(dims + 4);
    f.m = get_u32_le(dims + 8);
    f.data.resize(static_cast<std::size_t>(f.steps) * f.n * f.m);
    in.read(reinterpret_cast<char*>(f.data.data()),
            static_cast<std::streamsize>(f.data.size() * sizeof(double)));
    if (!in) fail("RuntimeFailure", "truncated increments file " + path);
    return f;
}

}  // namespace mvsde
