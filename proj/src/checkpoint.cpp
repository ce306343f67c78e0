#include "beatflow/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace beatflow {
namespace {

constexpr char kMagic[4] = {'B', 'F', 'C', 'K'};
constexpr std::uint32_t kVersion = 1;

static_assert(std::endian::native == std::endian::little, "checkpoint IO assumes a little-endian host");

void write_u32(std::ostream& os, std::uint32_t v) { os.write(reinterpret_cast<const char*>(&v), 4); }

void write_str(std::ostream& os, const std::string& s) {
    write_u32(os, static_cast<std::uint32_t>(s.size()));
    os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::uint32_t read_u32(std::istream& is) {
    std::uint32_t v = 0;
    is.read(reinterpret_cast<char*>(&v), 4);
    if (!is) throw std::runtime_error("checkpoint truncated");
    return v;
}

std::string read_str(std::istream& is) {
    const std::uint32_t n = read_u32(is);
    if (n > (1u << 30)) throw std::runtime_error("checkpoint string too long");
    std::string s(n, '\0');
    is.read(s.data(), n);
    if (!is) throw std::runtime_error("checkpoint truncated");
    return s;
}

}  // namespace

void Checkpoint::put(const nn::ParamSet& params, const std::string& prefix) {
    for (const auto& p : params) tensors[prefix + p.name] = p.value;
}

void Checkpoint::get(nn::ParamSet& params, const std::string& prefix) const {
    for (auto& p : params) {
        const nn::Mat& m = tensor(prefix + p.name);
        if (m.rows() != p.value.rows() || m.cols() != p.value.cols()) {
            throw std::runtime_error("checkpoint tensor '" + prefix + p.name + "' has shape " +
                                     std::to_string(m.rows()) + "x" + std::to_string(m.cols()) +
                                     ", expected " + std::to_string(p.value.rows()) + "x" +
                                     std::to_string(p.value.cols()));
        }
        p.value = m;
    }
}

const nn::Mat& Checkpoint::tensor(const std::string& name) const {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw std::runtime_error("checkpoint is missing tensor '" + name + "'");
    return it->second;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
    os.write(kMagic, 4);
    write_u32(os, kVersion);
    write_str(os, ckpt.kind);
    write_str(os, ckpt.meta.dump());
    write_u32(os, static_cast<std::uint32_t>(ckpt.tensors.size()));
    for (const auto& [name, m] : ckpt.tensors) {
        write_str(os, name);
        write_u32(os, static_cast<std::uint32_t>(m.rows()));
        write_u32(os, static_cast<std::uint32_t>(m.cols()));
        for (Eigen::Index i = 0; i < m.rows(); ++i) {
            for (Eigen::Index j = 0; j < m.cols(); ++j) {
                const double v = m(i, j);
                os.write(reinterpret_cast<const char*>(&v), sizeof v);
            }
        }
    }
    if (!os) throw std::runtime_error("failed writing " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open checkpoint " + path.string());
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, kMagic, 4) != 0) {
        throw std::runtime_error(path.string() + " is not a beatflow checkpoint");
    }
    const std::uint32_t version = read_u32(is);
    if (version != kVersion) throw std::runtime_error("unsupported checkpoint version " + std::to_string(version));
    Checkpoint ckpt;
    ckpt.kind = read_str(is);
    ckpt.meta = nlohmann::json::parse(read_str(is));
    const std::uint32_t count = read_u32(is);
    for (std::uint32_t k = 0; k < count; ++k) {
        std::string name = read_str(is);
        const std::uint32_t rows = read_u32(is);
        const std::uint32_t cols = read_u32(is);
        nn::Mat m(rows, cols);
        for (std::uint32_t i = 0; i < rows; ++i) {
            for (std::uint32_t j = 0; j < cols; ++j) {
                double v = 0.0;
                is.read(reinterpret_cast<char*>(&v), sizeof v);
                m(i, j) = v;
            }
        }
        if (!is) throw std::runtime_error("checkpoint truncated in tensor '" + name + "'");
        ckpt.tensors.emplace(std::move(name), std::move(m));
    }
    return ckpt;
}

}  // namespace beatflow
