/*
    Licensed under the Apache License, Version 2.0 (the "License");
    you may not use this file except in compliance with the License.
    You may obtain a copy of the License at

        https://www.apache.org/licenses/LICENSE-2.0

    Unless required by applicable law or agreed to in writing, software
    distributed under the License is distributed on an "AS IS" BASIS,
    WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
    See the License for the specific language governing permissions and
    limitations under the License.
*/

#ifndef PROMSKETCH_MEMORY_HPP
#define PROMSKETCH_MEMORY_HPP

#include <algorithm>
#include <cstddef>
#include <deque>
#include <unordered_map>
#include <vector>

// Heap footprint estimates for the containers the sketches use. They model glibc malloc chunks
// and libstdc++ container layouts, so that reported instance memory tracks what the allocator holds.
namespace promsketch::memory {

/// Bytes malloc reserves for an n-byte request: 8-byte header, 16-byte granularity, 32-byte minimum.
constexpr std::size_t chunk(std::size_t n) noexcept {
    return n == 0 ? 0 : std::max<std::size_t>(32, (n + 8 + 15) & ~std::size_t{15});
}

template <typename T>
std::size_t of(const std::vector<T>& v) noexcept {
    return chunk(v.capacity() * sizeof(T));
}

/// Node blocks of 512 bytes (or one element if larger) plus the node map, which starts at 8 slots.
template <typename T>
std::size_t of(const std::deque<T>& d) noexcept {
    constexpr std::size_t per_block = sizeof(T) < 512 ? 512 / sizeof(T) : 1;
    const std::size_t blocks = d.size() / per_block + 1;
    return blocks * chunk(per_block * sizeof(T)) + chunk(std::max<std::size_t>(8, blocks + 2) * sizeof(void*));
}

/// One node per element (next pointer plus value) and the bucket array when it is not the inline single bucket.
template <typename K, typename V>
std::size_t of(const std::unordered_map<K, V>& m) noexcept {
    const std::size_t buckets = m.bucket_count() > 1 ? chunk(m.bucket_count() * sizeof(void*)) : 0;
    return m.size() * chunk(sizeof(void*) + sizeof(std::pair<const K, V>)) + buckets;
}

}  // namespace promsketch::memory

#endif  // PROMSKETCH_MEMORY_HPP
