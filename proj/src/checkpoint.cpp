#include "dsa/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>

#include "dsa/error.hpp"

static_assert(std::endian::native == std::endian::little,
              "checkpoint serialization assumes a little-endian host");

namespace dsa {

namespace {

constexpr char kMagic[] = "dsa-ckpt-v1\n";
constexpr std::size_t kMagicLen = sizeof(kMagic) - 1;

template <typename T>
void put(std::ofstream& out, T value) {
    out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T get(std::ifstream& in, const std::string& path) {
    T value{};
    in.read(reinterpret_cast<char*>(&value), sizeof(T));
    if (!in) throw FormatError("checkpoint: truncated file: " + path);
    return value;
}

void put_string(std::ofstream& out, const std::string& s) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
    out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string get_string(std::ifstream& in, const std::string& path) {
    const auto len = get<std::uint32_t>(in, path);
    std::string s(len, '\0');
    in.read(s.data(), len);
    if (!in) throw FormatError("checkpoint: truncated file: " + path);
    return s;
}

}  // namespace

void write_checkpoint(const std::string& path, const CheckpointArchive& archive) {
    namespace fs = std::filesystem;
    const fs::path target(path);
    const fs::path tmp = target.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot write checkpoint: " + tmp.string());
        out.write(kMagic, static_cast<std::streamsize>(kMagicLen));
        put<std::uint64_t>(out, archive.config_text.size());
        out.write(archive.config_text.data(), static_cast<std::streamsize>(archive.config_text.size()));
        put<std::uint64_t>(out, archive.vocab.size());
        for (const auto& token : archive.vocab) put_string(out, token);
        put<std::uint64_t>(out, archive.entries.size());
        for (const auto& e : archive.entries) {
            put_string(out, e.name);
            put<std::uint32_t>(out, static_cast<std::uint32_t>(e.shape.size()));
            std::uint64_t numel = 1;
            for (Index d : e.shape) {
                put<std::uint64_t>(out, static_cast<std::uint64_t>(d));
                numel *= static_cast<std::uint64_t>(d);
            }
            if (numel != e.values.size())
                throw ContractError("checkpoint: entry '" + e.name + "' shape/value mismatch");
            out.write(reinterpret_cast<const char*>(e.values.data()),
                      static_cast<std::streamsize>(e.values.size() * sizeof(double)));
        }
        if (!out) throw IoError("write failed: " + tmp.string());
    }
    std::error_code ec;
    fs::rename(tmp, target, ec);
    if (ec) {
        fs::remove(tmp);
        throw IoError("cannot move checkpoint into place: " + ec.message());
    }
}

CheckpointArchive read_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint: " + path);
    char magic[kMagicLen];
    in.read(magic, static_cast<std::streamsize>(kMagicLen));
    if (!in || std::memcmp(magic, kMagic, kMagicLen) != 0)
        throw FormatError("checkpoint: bad magic (expected dsa-ckpt-v1): " + path);

    CheckpointArchive archive;
    const auto config_len = get<std::uint64_t>(in, path);
    archive.config_text.resize(config_len);
    in.read(archive.config_text.data(), static_cast<std::streamsize>(config_len));
    if (!in) throw FormatError("checkpoint: truncated config block: " + path);

    const auto vocab_count = get<std::uint64_t>(in, path);
    archive.vocab.reserve(vocab_count);
    for (std::uint64_t i = 0; i < vocab_count; ++i) archive.vocab.push_back(get_string(in, path));

    const auto entry_count = get<std::uint64_t>(in, path);
    archive.entries.reserve(entry_count);
    for (std::uint64_t i = 0; i < entry_count; ++i) {
        CheckpointEntry e;
        e.name = get_string(in, path);
        const auto rank = get<std::uint32_t>(in, path);
        std::uint64_t numel = 1;
        for (std::uint32_t d = 0; d < rank; ++d) {
            const auto dim = get<std::uint64_t>(in, path);
            e.shape.push_back(static_cast<Index>(dim));
            numel *= dim;
        }
        e.values.resize(numel);
        in.read(reinterpret_cast<char*>(e.values.data()),
                static_cast<std::streamsize>(numel * sizeof(double)));
        if (!in) throw FormatError("checkpoint: truncated tensor data in '" + e.name + "': " + path);
        archive.entries.push_back(std::move(e));
    }
    return archive;
}

}  // namespace dsa
