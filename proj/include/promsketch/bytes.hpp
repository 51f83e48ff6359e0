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

#ifndef PROMSKETCH_BYTES_HPP
#define PROMSKETCH_BYTES_HPP

#include <bit>
#include <cstdint>
#include <cstring>
#include <span>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

#include "promsketch/core.hpp"

namespace promsketch {

static_assert(std::endian::native == std::endian::little, "snapshot framing assumes a little-endian host");

// Little-endian framing helpers for snapshots and debug dumps.
class ByteWriter {
  public:
    template <typename T>
        requires std::is_arithmetic_v<T>
    void put(T v) {
        const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
        buf_.insert(buf_.end(), p, p + sizeof(T));
    }

    template <typename T>
        requires std::is_arithmetic_v<T>
    void put_span(std::span<const T> values) {
        const auto* p = reinterpret_cast<const std::uint8_t*>(values.data());
        buf_.insert(buf_.end(), p, p + values.size_bytes());
    }

    void put_varint(std::uint64_t v) {
        while (v >= 0x80) {
            buf_.push_back(static_cast<std::uint8_t>(v | 0x80));
            v >>= 7;
        }
        buf_.push_back(static_cast<std::uint8_t>(v));
    }

    void put_string(std::string_view s) {
        put_varint(s.size());
        buf_.insert(buf_.end(), s.begin(), s.end());
    }

    void put_bytes(std::span<const std::uint8_t> bytes) { buf_.insert(buf_.end(), bytes.begin(), bytes.end()); }

    std::size_t size() const noexcept { return buf_.size(); }
    const std::vector<std::uint8_t>& bytes() const& noexcept { return buf_; }
    std::vector<std::uint8_t> take() && { return std::move(buf_); }

  private:
    std::vector<std::uint8_t> buf_;
};

class ByteReader {
  public:
    explicit ByteReader(std::span<const std::uint8_t> data) : data_(data) {}

    template <typename T>
        requires std::is_arithmetic_v<T>
    T get() {
        need(sizeof(T));
        T v;
        std::memcpy(&v, data_.data() + pos_, sizeof(T));
        pos_ += sizeof(T);
        return v;
    }

    template <typename T>
        requires std::is_arithmetic_v<T>
    void get_into(std::span<T> out) {
        need(out.size_bytes());
        std::memcpy(out.data(), data_.data() + pos_, out.size_bytes());
        pos_ += out.size_bytes();
    }

    std::uint64_t get_varint() {
        std::uint64_t v = 0;
        for (int shift = 0; shift < 64; shift += 7) {
            need(1);
            std::uint8_t b = data_[pos_++];
            v |= static_cast<std::uint64_t>(b & 0x7f) << shift;
            if (!(b & 0x80)) return v;
        }
        throw Error(ErrorCode::kCorruptData, "varint too long");
    }

    std::string get_string() {
        auto n = get_varint();
        need(n);
        std::string s(reinterpret_cast<const char*>(data_.data() + pos_), n);
        pos_ += n;
        return s;
    }

    std::span<const std::uint8_t> get_bytes(std::size_t n) {
        need(n);
        auto out = data_.subspan(pos_, n);
        pos_ += n;
        return out;
    }

    bool done() const noexcept { return pos_ == data_.size(); }
    std::size_t position() const noexcept { return pos_; }

  private:
    void need(std::size_t n) const {
        if (data_.size() - pos_ < n) throw Error(ErrorCode::kCorruptData, "truncated input");
    }

    std::span<const std::uint8_t> data_;
    std::size_t pos_ = 0;
};

}  // namespace promsketch

#endif  // PROMSKETCH_BYTES_HPP
