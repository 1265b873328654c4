#include "voxelforge/data_io.hpp"
#include "voxelforge/errors.hpp"

#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>
#include <sstream>

namespace voxelforge {

namespace {

template <typename T>
void put_le(std::vector<std::byte>& out, T value) {
    using U = std::make_unsigned_t<T>;
    auto bits = static_cast<U>(value);
    for (std::size_t i = 0; i < sizeof(T); ++i) {
        out.push_back(static_cast<std::byte>(bits & 0xFFu));
        bits = static_cast<U>(bits >> 8);
    }
}

template <typename T>
T get_le(const std::byte* p) {
    T value = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) {
        value |= static_cast<T>(std::to_integer<unsigned>(p[i])) << (8 * i);
    }
    return value;
}

std::vector<std::byte> read_bytes(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw MissingFile("cannot open " + path.string());
    std::vector<char> raw((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    std::vector<std::byte> out(raw.size());
    std::memcpy(out.data(), raw.data(), raw.size());
    return out;
}

}  // namespace

std::vector<std::byte> encode_matrix(const Matrix& matrix) {
    std::vector<std::byte> out;
    out.reserve(kMatrixHeaderBytes + static_cast<std::size_t>(matrix.size()) * 4);
    for (char c : kMatrixMagic) out.push_back(static_cast<std::byte>(c));
    put_le<std::uint32_t>(out, kMatrixVersion);
    put_le<std::uint64_t>(out, static_cast<std::uint64_t>(matrix.rows()));
    put_le<std::uint64_t>(out, static_cast<std::uint64_t>(matrix.cols()));
    for (Index r = 0; r < matrix.rows(); ++r) {
        for (Index c = 0; c < matrix.cols(); ++c) {
            const auto value = static_cast<float>(matrix(r, c));
            if (!std::isfinite(value)) {
                throw NonFiniteValue("matrix entry (" + std::to_string(r) + ", " +
                                     std::to_string(c) + ") is not finite at 32-bit precision");
            }
            put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(value));
        }
    }
    return out;
}

Matrix decode_matrix(std::span<const std::byte> bytes, const std::string& origin) {
    if (bytes.size() < sizeof(kMatrixMagic) ||
        std::memcmp(bytes.data(), kMatrixMagic, sizeof(kMatrixMagic)) != 0) {
        throw BadMagic(origin + ": not a NENC matrix file");
    }
    if (bytes.size() < kMatrixHeaderBytes) throw TruncatedPayload(origin + ": truncated header");
    const auto version = get_le<std::uint32_t>(bytes.data() + 4);
    if (version != kMatrixVersion) {
        throw SchemaMismatch(origin + ": unsupported matrix version " + std::to_string(version));
    }
    const auto rows = get_le<std::uint64_t>(bytes.data() + 8);
    const auto cols = get_le<std::uint64_t>(bytes.data() + 16);
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() / 4;
    if (cols != 0 && rows > limit / cols) throw TruncatedPayload(origin + ": absurd dimensions");
    const std::uint64_t payload = rows * cols * 4;
    const std::uint64_t available = bytes.size() - kMatrixHeaderBytes;
    if (available < payload) {
        throw TruncatedPayload(origin + ": payload has " + std::to_string(available) +
                               " bytes, header declares " + std::to_string(payload));
    }
    if (available > payload) throw SizeMismatch(origin + ": trailing bytes after payload");

    Matrix out(static_cast<Index>(rows), static_cast<Index>(cols));
    const std::byte* p = bytes.data() + kMatrixHeaderBytes;
    for (Index r = 0; r < out.rows(); ++r) {
        for (Index c = 0; c < out.cols(); ++c, p += 4) {
            const auto value = std::bit_cast<float>(get_le<std::uint32_t>(p));
            if (!std::isfinite(value)) {
                throw NonFiniteValue(origin + ": non-finite value at (" + std::to_string(r) +
                                     ", " + std::to_string(c) + ")");
            }
            out(r, c) = value;
        }
    }
    return out;
}

void write_matrix(const Matrix& matrix, const fs::path& path) {
    const auto bytes = encode_matrix(matrix);
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw RuntimeFailure("cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw RuntimeFailure("short write to " + path.string());
}

Matrix parse_csv_matrix(const std::string& text, const std::string& origin) {
    std::istringstream in(text);
    std::string line;
    std::size_t cols = 0;
    bool header = true;
    std::vector<std::vector<double>> rows;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.find_first_not_of(" \t") == std::string::npos) continue;
        std::vector<std::string> fields;
        std::size_t start = 0;
        while (true) {
            const auto comma = line.find(',', start);
            fields.push_back(line.substr(start, comma - start));
            if (comma == std::string::npos) break;
            start = comma + 1;
        }
        if (header) {
            for (std::size_t i = 0; i < fields.size(); ++i) {
                if (fields[i] != "f" + std::to_string(i)) {
                    throw BadMagic(origin + ": CSV header must be f0,f1,...");
                }
            }
            cols = fields.size();
            header = false;
            continue;
        }
        if (fields.size() != cols) {
            throw SizeMismatch(origin + ": CSV row " + std::to_string(rows.size() + 1) + " has " +
                               std::to_string(fields.size()) + " fields, expected " +
                               std::to_string(cols));
        }
        std::vector<double> values(cols);
        for (std::size_t i = 0; i < cols; ++i) {
            std::string_view f = fields[i];
            while (!f.empty() && (f.front() == ' ' || f.front() == '\t')) f.remove_prefix(1);
            while (!f.empty() && (f.back() == ' ' || f.back() == '\t')) f.remove_suffix(1);
            if (!f.empty() && f.front() == '+') f.remove_prefix(1);
            auto [ptr, ec] = std::from_chars(f.data(), f.data() + f.size(), values[i]);
            if (ec != std::errc{} || ptr != f.data() + f.size()) {
                throw SchemaMismatch(origin + ": cannot parse '" + fields[i] + "' as a number");
            }
            if (!std::isfinite(values[i])) throw NonFiniteValue(origin + ": non-finite CSV value");
        }
        rows.push_back(std::move(values));
    }
    if (header) throw BadMagic(origin + ": empty CSV file");
    Matrix out(static_cast<Index>(rows.size()), static_cast<Index>(cols));
    for (std::size_t r = 0; r < rows.size(); ++r) {
        for (std::size_t c = 0; c < cols; ++c) {
            // same 32-bit precision as the binary container
            out(static_cast<Index>(r), static_cast<Index>(c)) = static_cast<float>(rows[r][c]);
        }
    }
    return out;
}

Matrix read_matrix(const fs::path& path) {
    const auto bytes = read_bytes(path);
    const bool has_magic = bytes.size() >= 4 && std::memcmp(bytes.data(), kMatrixMagic, 4) == 0;
    if (!has_magic && path.extension() == ".csv") {
        return parse_csv_matrix(std::string(reinterpret_cast<const char*>(bytes.data()), bytes.size()),
                                path.string());
    }
    return decode_matrix(bytes, path.string());
}

Json read_json_file(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw MissingFile("cannot open " + path.string());
    try {
        return Json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw SchemaMismatch(path.string() + ": invalid JSON: " + e.what());
    }
}

void write_json_file(const Json& j, const fs::path& path) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw RuntimeFailure("cannot write " + path.string());
    out << j.dump(2) << '\n';
}

}  // namespace voxelforge
