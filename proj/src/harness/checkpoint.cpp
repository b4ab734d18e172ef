#include "wmb/harness/checkpoint.hpp"

#include <cstring>
#include <map>
#include <stdexcept>

#include "wmb/io.hpp"

namespace wmb::harness {

namespace {

constexpr char kMagic[8] = {'W', 'M', 'B', 'C', 'K', 'P', 'T', '1'};
constexpr std::uint32_t kVersion = 1;

struct Parsed {
    std::vector<ManifestEntry> entries;
    std::size_t payload_start = 0;
    std::uint64_t payload_bytes = 0;
};

Parsed parse(const std::vector<std::uint8_t>& bytes, const std::string& what) {
    io::Reader r(bytes.data(), bytes.size());
    Parsed p;
    try {
        char magic[8];
        for (char& c : magic) c = static_cast<char>(r.u8());
        if (std::memcmp(magic, kMagic, sizeof kMagic) != 0)
            throw std::runtime_error("bad magic at offset 0");
        const auto version = r.u32();
        if (version != kVersion)
            throw std::runtime_error("unsupported version " + std::to_string(version) + " at offset 8");
        const auto count = r.u32();
        std::uint64_t expected_offset = 0;
        for (std::uint32_t i = 0; i < count; ++i) {
            const std::size_t at = r.offset();
            ManifestEntry e;
            e.name = r.str();
            e.rows = static_cast<int>(r.u32());
            e.cols = static_cast<int>(r.u32());
            e.offset = r.u64();
            const auto frozen = r.u8();
            if (frozen > 1) throw std::runtime_error("bad frozen flag for '" + e.name + "' at offset " + std::to_string(r.offset() - 1));
            e.frozen = frozen == 1;
            if (e.offset != expected_offset)
                throw std::runtime_error("entry '" + e.name + "' at offset " + std::to_string(at) + " has payload offset " +
                                         std::to_string(e.offset) + ", expected " + std::to_string(expected_offset));
            expected_offset += 8ULL * static_cast<std::uint64_t>(e.rows) * static_cast<std::uint64_t>(e.cols);
            p.entries.push_back(std::move(e));
        }
        const std::size_t len_at = r.offset();
        p.payload_bytes = r.u64();
        p.payload_start = r.offset();
        if (p.payload_bytes != expected_offset)
            throw std::runtime_error("payload length field at offset " + std::to_string(len_at) + " says " +
                                     std::to_string(p.payload_bytes) + " bytes, manifest needs " +
                                     std::to_string(expected_offset));
        if (r.remaining() != p.payload_bytes)
            throw std::runtime_error("payload starting at offset " + std::to_string(p.payload_start) + " has " +
                                     std::to_string(r.remaining()) + " bytes, expected " +
                                     std::to_string(p.payload_bytes));
    } catch (const std::runtime_error& e) {
        throw std::runtime_error("checkpoint" + (what.empty() ? std::string() : " " + what) + ": " + e.what());
    }
    return p;
}

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const std::vector<Parameter>& params) {
    io::Writer w;
    w.bytes(kMagic, sizeof kMagic);
    w.u32(kVersion);
    w.u32(static_cast<std::uint32_t>(params.size()));
    std::uint64_t offset = 0;
    for (const auto& p : params) {
        w.str(p.name);
        w.u32(static_cast<std::uint32_t>(p.tensor.rows()));
        w.u32(static_cast<std::uint32_t>(p.tensor.cols()));
        w.u64(offset);
        w.u8(p.frozen ? 1 : 0);
        offset += 8ULL * static_cast<std::uint64_t>(p.tensor.size());
    }
    w.u64(offset);
    for (const auto& p : params) {
        const Matrix& m = p.tensor.value();
        for (Eigen::Index i = 0; i < m.size(); ++i) w.f64(m.data()[i]);
    }
    return w.data();
}

void save_checkpoint(const std::vector<Parameter>& params, const std::filesystem::path& path) {
    io::write_file(path.string(), encode_checkpoint(params));
}

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path) {
    return parse(io::read_file(path.string()), path.string()).entries;
}

void decode_checkpoint(const std::vector<std::uint8_t>& bytes, std::vector<Parameter>& params) {
    const Parsed p = parse(bytes, "");
    std::map<std::string, const ManifestEntry*> by_name;
    for (const auto& e : p.entries)
        if (!by_name.emplace(e.name, &e).second) throw std::runtime_error("checkpoint: duplicate parameter '" + e.name + "'");
    if (p.entries.size() != params.size())
        throw std::runtime_error("checkpoint: holds " + std::to_string(p.entries.size()) + " parameters, model has " +
                                 std::to_string(params.size()));
    // Validate everything before writing anything.
    std::vector<const ManifestEntry*> match;
    for (const auto& param : params) {
        auto it = by_name.find(param.name);
        if (it == by_name.end()) throw std::runtime_error("checkpoint: parameter '" + param.name + "' is missing");
        const ManifestEntry& e = *it->second;
        if (e.rows != param.tensor.rows() || e.cols != param.tensor.cols())
            throw std::runtime_error("checkpoint: parameter '" + param.name + "' has shape [" + std::to_string(e.rows) +
                                     "," + std::to_string(e.cols) + "], model expects " + param.tensor.shape().str());
        if (e.frozen != param.frozen)
            throw std::runtime_error("checkpoint: parameter '" + param.name + "' frozen flag differs from the model");
        match.push_back(&e);
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        const ManifestEntry& e = *match[i];
        io::Reader r(bytes.data() + p.payload_start + e.offset, 8ULL * e.rows * e.cols);
        Matrix& m = params[i].tensor.mutable_value();
        for (Eigen::Index k = 0; k < m.size(); ++k) m.data()[k] = r.f64();
    }
}

void load_checkpoint(const std::filesystem::path& path, std::vector<Parameter>& params) {
    const auto bytes = io::read_file(path.string());
    try {
        decode_checkpoint(bytes, params);
    } catch (const std::runtime_error& e) {
        throw std::runtime_error(path.string() + ": " + e.what());
    }
}

}  // namespace wmb::harness
