// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <string>

#include "kdnas/tensor.hpp"

namespace kdnas {

/// Binary named-tensor archive: magic `KDNASTEN`, u32 version, u32 count,
/// then per tensor u32 name length, name bytes, u32 rank, i32 dims, f64 data.
/// Integers and doubles are stored little-endian.
std::string encode_tensor_archive(const ParameterTable& table);
ParameterTable decode_tensor_archive(const std::string& bytes);

void write_tensor_archive(const std::filesystem::path& path, const ParameterTable& table);
ParameterTable read_tensor_archive(const std::filesystem::path& path);

std::string read_file(const std::filesystem::path& path);
/// Writes via a temporary file and rename so readers never see partial data.
void write_file_atomic(const std::filesystem::path& path, const std::string& bytes);

}  // namespace kdnas
