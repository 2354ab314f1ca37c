#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "evsae/common.hpp"

namespace evsae {

// Binary tensor container: 8-byte magic, u64 version, u64 record count, then
// per record a length-prefixed name, dtype tag, rank, dims and a row-major
// little-endian float32 payload. All header integers are u64 little-endian.
// One container backs traj.bin, acts_layer{L}.bin and the SAE checkpoint
// weights, so every artifact round-trips bit-exactly through the same code.

inline constexpr char kTensorMagic[8] = {'E', 'V', 'S', 'A', 'E', 'B', 'I', 'N'};
inline constexpr uint64_t kTensorFormatVersion = 1;
inline constexpr uint64_t kDtypeF32 = 1;

struct TensorRecord {
    std::vector<uint64_t> dims;
    std::vector<float> data;  // row-major

    uint64_t count() const {
        uint64_t n = 1;
        for (uint64_t d : dims) n *= d;
        return n;
    }
};

using TensorFile = std::map<std::string, TensorRecord>;

void write_tensor_container(std::ostream& out, const std::vector<std::pair<std::string, TensorRecord>>& records);
TensorFile read_tensor_container(std::istream& in, const std::string& source_name);

void write_tensor_file(const std::filesystem::path& path, const std::vector<std::pair<std::string, TensorRecord>>& records);
TensorFile read_tensor_file(const std::filesystem::path& path);

// Eigen bridges (float on disk, row-major payload)
TensorRecord to_record(const Eigen::MatrixXf& m);
TensorRecord to_record(const Eigen::VectorXf& v);
Eigen::MatrixXf record_to_matrix(const TensorRecord& r);
Eigen::VectorXf record_to_vector(const TensorRecord& r);

}  // namespace evsae
