// Copyright (c) 2026, smoe-stereo contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <charconv>
#include <concepts>
#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <string>
#include <string_view>

#include "core/errors.hpp"

namespace smoe {

// Shortest decimal that reads back to the same double; locale independent.
inline std::string format_double(double v) {
    char buf[32];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return {buf, res.ptr};
}

// Comma-separated, header row first, '.' decimal point.
class CsvWriter {
public:
    CsvWriter(const std::filesystem::path& path, std::initializer_list<std::string_view> header) : path_(path) {
        if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
        out_.open(path, std::ios::binary | std::ios::trunc);
        if (!out_) throw IoError("cannot open " + path.string());
        for (auto h : header) field(std::string(h));
        end_row();
    }

    CsvWriter& operator<<(double v) { return field(format_double(v)); }
    CsvWriter& operator<<(std::string_view v) { return field(std::string(v)); }
    CsvWriter& operator<<(const char* v) { return field(v); }
    template <std::integral T>
    CsvWriter& operator<<(T v) {
        return field(std::to_string(v));
    }

    void end_row() {
        line_ += '\n';
        out_ << line_;
        line_.clear();
        if (!out_) throw IoError("failed writing " + path_.string());
    }

private:
    CsvWriter& field(const std::string& text) {
        if (!line_.empty()) line_ += ',';
        line_ += text;
        return *this;
    }

    std::filesystem::path path_;
    std::ofstream out_;
    std::string line_;
};

}  // namespace smoe
