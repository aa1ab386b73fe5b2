#include <zlib.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "vitens/model.hpp"

namespace vitens {

namespace {

constexpr char kMagic[4] = {'V', 'T', 'F', '1'};

static_assert(std::endian::native == std::endian::little, "weights I/O assumes a little-endian host");

void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint64_t get_u64(const unsigned char* p) {
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | p[i];
    return v;
}

std::uint32_t get_u32(const unsigned char* p) {
    std::uint32_t v = 0;
    for (int i = 3; i >= 0; --i) v = (v << 8) | p[i];
    return v;
}

std::uint32_t crc_of(const char* data, std::size_t size) {
    uLong crc = crc32(0L, Z_NULL, 0);
    // crc32 takes a uInt length; feed in chunks.
    while (size > 0) {
        const uInt chunk = static_cast<uInt>(std::min<std::size_t>(size, 1u << 30));
        crc = crc32(crc, reinterpret_cast<const Bytef*>(data), chunk);
        data += chunk;
        size -= chunk;
    }
    return static_cast<std::uint32_t>(crc);
}

Shape parse_shape(const std::string& text, const std::filesystem::path& path) {
    Shape shape;
    if (text.empty()) return shape;
    std::stringstream ss(text);
    std::string part;
    while (std::getline(ss, part, ',')) {
        try {
            std::size_t used = 0;
            const unsigned long long v = std::stoull(part, &used);
            if (used != part.size() || v == 0) throw std::invalid_argument(part);
            shape.push_back(static_cast<std::size_t>(v));
        } catch (const std::exception&) {
            throw FormatError(path.string() + ": bad shape '" + text + "' in manifest");
        }
    }
    return shape;
}

}  // namespace

void save_weights(const ParamStore& params, const std::filesystem::path& path) {
    std::string manifest;
    std::string payload;
    for (const auto& e : params.entries()) {
        if (e.name.find_first_of("\t\n") != std::string::npos) {
            throw std::invalid_argument("parameter name contains tab or newline: " + e.name);
        }
        std::string dims;
        for (std::size_t i = 0; i < e.value.shape().size(); ++i) {
            if (i) dims += ',';
            dims += std::to_string(e.value.shape()[i]);
        }
        manifest += e.name + "\tf64\t" + dims + "\t" + std::to_string(payload.size()) + "\n";
        const auto data = e.value.data();
        payload.append(reinterpret_cast<const char*>(data.data()), data.size() * sizeof(double));
    }

    std::string out(kMagic, 4);
    put_u64(out, manifest.size());
    out += manifest;
    out += payload;
    put_u32(out, crc_of(payload.data(), payload.size()));

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("cannot open " + path.string() + " for writing");
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw std::runtime_error("failed writing " + path.string());
}

void save_weights(const Model& model, const std::filesystem::path& path) { save_weights(model.params(), path); }

ParamStore read_weights(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw FormatError("cannot open weights file " + path.string());
    const std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    const auto* raw = reinterpret_cast<const unsigned char*>(bytes.data());

    if (bytes.size() < 4 + 8 + 4 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
        throw FormatError(path.string() + ": not a VTF1 weights file");
    }
    const std::uint64_t manifest_len = get_u64(raw + 4);
    if (manifest_len > bytes.size() - 16) throw FormatError(path.string() + ": truncated manifest");
    const std::string manifest = bytes.substr(12, manifest_len);
    const std::size_t payload_begin = 12 + manifest_len;
    const std::size_t payload_size = bytes.size() - payload_begin - 4;
    const std::uint32_t stored_crc = get_u32(raw + bytes.size() - 4);
    if (crc_of(bytes.data() + payload_begin, payload_size) != stored_crc) {
        throw FormatError(path.string() + ": payload checksum mismatch (file truncated or corrupt)");
    }

    ParamStore store;
    std::stringstream lines(manifest);
    std::string line;
    std::size_t expected_offset = 0;
    while (std::getline(lines, line)) {
        std::vector<std::string> fields;
        std::stringstream ls(line);
        std::string field;
        while (std::getline(ls, field, '\t')) fields.push_back(field);
        if (line.back() == '\t') fields.emplace_back();
        if (fields.size() != 4) throw FormatError(path.string() + ": malformed manifest line '" + line + "'");
        if (fields[1] != "f64") throw FormatError(path.string() + ": unsupported dtype " + fields[1]);
        const Shape shape = parse_shape(fields[2], path);
        std::size_t offset = 0;
        try {
            offset = std::stoull(fields[3]);
        } catch (const std::exception&) {
            throw FormatError(path.string() + ": bad offset for " + fields[0]);
        }
        const std::size_t nbytes = shape_numel(shape) * sizeof(double);
        if (offset != expected_offset || offset + nbytes > payload_size) {
            throw FormatError(path.string() + ": tensor " + fields[0] + " lies outside the payload");
        }
        std::vector<double> values(shape_numel(shape));
        std::memcpy(values.data(), bytes.data() + payload_begin + offset, nbytes);
        store.add(fields[0], Tensor(shape, std::move(values)));
        expected_offset = offset + nbytes;
    }
    if (expected_offset != payload_size) throw FormatError(path.string() + ": trailing bytes after last tensor");
    return store;
}

Model load_weights(const ModelSpec& spec, const std::filesystem::path& path) {
    ParamStore stored = read_weights(path);
    const auto decls = declare_parameters(spec);
    const auto& entries = stored.entries();
    const std::size_t n = std::min(decls.size(), entries.size());
    for (std::size_t i = 0; i < n; ++i) {
        if (decls[i].name != entries[i].name) {
            throw FormatError(path.string() + ": entry " + std::to_string(i) + " is '" + entries[i].name +
                              "', model " + spec.name + " expects '" + decls[i].name + "'");
        }
        if (decls[i].shape != entries[i].value.shape()) {
            throw FormatError(path.string() + ": " + decls[i].name + " has shape " +
                              shape_str(entries[i].value.shape()) + ", expected " + shape_str(decls[i].shape));
        }
    }
    if (decls.size() != entries.size()) {
        const bool file_short = entries.size() < decls.size();
        throw FormatError(path.string() + ": " + (file_short ? "missing " + decls[n].name
                                                             : "unexpected extra tensor " + entries[n].name));
    }
    ParamStore params;
    for (std::size_t i = 0; i < n; ++i) params.add(decls[i].name, entries[i].value, decls[i].frozen);
    return Model(spec, std::move(params));
}

}  // namespace vitens
