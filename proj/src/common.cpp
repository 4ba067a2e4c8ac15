#include "lmmvqa/common.hpp"

#include <cstdio>

namespace lmmvqa {

std::uint64_t fnv1a64(const void* data, std::size_t size, std::uint64_t state) {
    const auto* bytes = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < size; ++i) {
        state ^= bytes[i];
        state *= 0x100000001b3ULL;
    }
    return state;
}

std::uint64_t fnv1a64(std::string_view text, std::uint64_t state) {
    return fnv1a64(text.data(), text.size(), state);
}

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (salt + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

std::uint64_t mix_seed(std::uint64_t seed, std::string_view salt) {
    return mix_seed(seed, fnv1a64(salt));
}

std::string to_hex(std::uint64_t value) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(value));
    return buf;
}

}  // namespace lmmvqa
