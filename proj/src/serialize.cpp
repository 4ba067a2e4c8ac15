#include "lmmvqa/serialize.hpp"

#include <fstream>

#include "lmmvqa/common.hpp"

namespace lmmvqa {

namespace {

constexpr char kMagic[8] = {'L', 'M', 'M', 'V', 'W', '6', '4', '\0'};

template <typename T>
void put(std::ostream& out, const T& v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& in) {
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    return v;
}

}  // namespace

void save_named_matrices(const std::filesystem::path& path,
                         const std::vector<std::pair<std::string, const Eigen::MatrixXd*>>& entries) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write weights: " + path.string());
    out.write(kMagic, sizeof(kMagic));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(entries.size()));
    for (const auto& [name, matrix] : entries) {
        put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
        out.write(name.data(), static_cast<std::streamsize>(name.size()));
        put<std::uint32_t>(out, static_cast<std::uint32_t>(matrix->rows()));
        put<std::uint32_t>(out, static_cast<std::uint32_t>(matrix->cols()));
        for (Eigen::Index r = 0; r < matrix->rows(); ++r)
            for (Eigen::Index c = 0; c < matrix->cols(); ++c) put<double>(out, (*matrix)(r, c));
    }
    if (!out) throw IoError("short write: " + path.string());
}

std::map<std::string, Eigen::MatrixXd> load_named_matrices(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read weights: " + path.string());
    char magic[8];
    in.read(magic, sizeof(magic));
    if (!in || std::string_view(magic, 7) != std::string_view(kMagic, 7))
        throw IoError("bad weights magic: " + path.string());
    const auto count = get<std::uint32_t>(in);
    std::map<std::string, Eigen::MatrixXd> entries;
    for (std::uint32_t i = 0; i < count; ++i) {
        const auto name_len = get<std::uint32_t>(in);
        std::string name(name_len, '\0');
        in.read(name.data(), name_len);
        const auto rows = get<std::uint32_t>(in);
        const auto cols = get<std::uint32_t>(in);
        Eigen::MatrixXd m(rows, cols);
        for (std::uint32_t r = 0; r < rows; ++r)
            for (std::uint32_t c = 0; c < cols; ++c) m(r, c) = get<double>(in);
        if (!in) throw IoError("truncated weights: " + path.string());
        entries.emplace(std::move(name), std::move(m));
    }
    return entries;
}

}  // namespace lmmvqa
