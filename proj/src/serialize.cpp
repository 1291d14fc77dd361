#include "lorakit/serialize.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "lorakit/errors.hpp"

namespace lorakit {

namespace {

constexpr char kMagic[8] = {'L', 'K', 'T', 'E', 'N', 'S', 'R', '\0'};
constexpr std::uint32_t kVersion = 1;

void append_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void append_f64(std::string& out, double v) {
    std::uint64_t bits = std::bit_cast<std::uint64_t>(v);
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
}

class Reader {
public:
    Reader(std::string data, std::string name) : data_(std::move(data)), name_(std::move(name)) {}

    void need(std::size_t n) const {
        if (pos_ + n > data_.size()) {
            throw DataError(name_ + ": truncated file (wanted " + std::to_string(n) +
                            " bytes at offset " + std::to_string(pos_) + ")");
        }
    }

    std::string_view take(std::size_t n) {
        need(n);
        std::string_view view(data_.data() + pos_, n);
        pos_ += n;
        return view;
    }

    std::uint32_t take_u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) {
            v |= static_cast<std::uint32_t>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
        }
        pos_ += 4;
        return v;
    }

    double take_f64() {
        need(8);
        std::uint64_t bits = 0;
        for (int i = 0; i < 8; ++i) {
            bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(data_[pos_ + i]))
                    << (8 * i);
        }
        pos_ += 8;
        return std::bit_cast<double>(bits);
    }

    bool exhausted() const { return pos_ == data_.size(); }
    const std::string& name() const { return name_; }

private:
    std::string data_;
    std::string name_;
    std::size_t pos_ = 0;
};

}  // namespace

std::uint64_t fnv1a64(std::span<const unsigned char> bytes) {
    std::uint64_t hash = 0xcbf29ce484222325ull;
    for (unsigned char b : bytes) {
        hash ^= b;
        hash *= 0x100000001b3ull;
    }
    return hash;
}

std::uint64_t fnv1a64_file(const std::filesystem::path& path) {
    std::string content = read_text_file(path);
    return fnv1a64(std::span<const unsigned char>(
        reinterpret_cast<const unsigned char*>(content.data()), content.size()));
}

std::string fnv1a64_hex(std::uint64_t digest) {
    static const char* hex = "0123456789abcdef";
    std::string out(16, '0');
    for (int i = 15; i >= 0; --i) {
        out[i] = hex[digest & 0xf];
        digest >>= 4;
    }
    return out;
}

std::string read_text_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open file: " + path.string());
    std::string content((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (in.bad()) throw DataError("read failed: " + path.string());
    return content;
}

void write_text_file(const std::filesystem::path& path, std::string_view content) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot open file for writing: " + path.string());
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    out.flush();
    if (!out) throw DataError("write failed: " + path.string());
}

void write_tensor_file(const std::filesystem::path& path, const NamedTensorFile& file) {
    nlohmann::json header;
    header["kind"] = file.kind;
    header["meta"] = file.meta;
    nlohmann::json descriptors = nlohmann::json::array();
    for (const auto& [name, tensor] : file.tensors) {
        if (!tensor.defined()) throw ContractError("write_tensor_file: undefined tensor " + name);
        descriptors.push_back({{"name", name}, {"shape", tensor.shape()}});
    }
    header["tensors"] = descriptors;
    std::string header_text = header.dump();

    std::string out;
    out.append(kMagic, sizeof(kMagic));
    append_u32(out, kVersion);
    append_u32(out, static_cast<std::uint32_t>(header_text.size()));
    out += header_text;
    for (const auto& [name, tensor] : file.tensors) {
        for (double v : tensor.values()) append_f64(out, v);
    }
    write_text_file(path, out);
}

NamedTensorFile read_tensor_file(const std::filesystem::path& path) {
    Reader reader(read_text_file(path), path.string());
    std::string_view magic = reader.take(sizeof(kMagic));
    if (std::memcmp(magic.data(), kMagic, sizeof(kMagic)) != 0) {
        throw DataError(path.string() + ": not a lorakit tensor file (bad magic)");
    }
    std::uint32_t version = reader.take_u32();
    if (version != kVersion) {
        throw DataError(path.string() + ": unsupported format version " + std::to_string(version));
    }
    std::uint32_t header_len = reader.take_u32();
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(reader.take(header_len));
    } catch (const nlohmann::json::exception& e) {
        throw DataError(path.string() + ": corrupt header: " + e.what());
    }

    NamedTensorFile file;
    try {
        file.kind = header.at("kind").get<std::string>();
        file.meta = header.value("meta", nlohmann::json::object());
        for (const auto& descriptor : header.at("tensors")) {
            std::string name = descriptor.at("name").get<std::string>();
            std::vector<std::size_t> shape = descriptor.at("shape").get<std::vector<std::size_t>>();
            std::size_t count = 1;
            for (std::size_t d : shape) count *= d;
            std::vector<double> data(count);
            for (double& v : data) v = reader.take_f64();
            file.tensors.emplace_back(name, Tensor::from_data(std::move(shape), std::move(data)));
        }
    } catch (const nlohmann::json::exception& e) {
        throw DataError(path.string() + ": malformed header field: " + e.what());
    }
    if (!reader.exhausted()) {
        throw DataError(path.string() + ": trailing bytes after tensor data");
    }
    return file;
}

}  // namespace lorakit
