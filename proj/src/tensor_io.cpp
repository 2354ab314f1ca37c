#include "evsae/tensor_io.hpp"

#include <cstring>
#include <fstream>

namespace evsae {

namespace {

void write_u64(std::ostream& out, uint64_t v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

uint64_t read_u64(std::istream& in, const std::string& what) {
    uint64_t v = 0;
    in.read(reinterpret_cast<char*>(&v), sizeof(v));
    if (!in) throw IoError("truncated header while reading " + what);
    return v;
}

}  // namespace

void write_tensor_container(std::ostream& out,
                            const std::vector<std::pair<std::string, TensorRecord>>& records) {
    out.write(kTensorMagic, sizeof(kTensorMagic));
    write_u64(out, kTensorFormatVersion);
    write_u64(out, records.size());
    for (const auto& [name, rec] : records) {
        write_u64(out, name.size());
        out.write(name.data(), static_cast<std::streamsize>(name.size()));
        write_u64(out, kDtypeF32);
        write_u64(out, rec.dims.size());
        for (uint64_t d : rec.dims) write_u64(out, d);
        if (rec.data.size() != rec.count())
            throw ShapeMismatch("tensor '" + name + "' payload does not match dims");
        out.write(reinterpret_cast<const char*>(rec.data.data()),
                  static_cast<std::streamsize>(rec.data.size() * sizeof(float)));
    }
}

TensorFile read_tensor_container(std::istream& in, const std::string& source_name) {
    char magic[8];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kTensorMagic, sizeof(magic)) != 0)
        throw FormatVersionMismatch("bad magic in " + source_name);
    const uint64_t version = read_u64(in, source_name);
    if (version != kTensorFormatVersion)
        throw FormatVersionMismatch("unsupported tensor format version " +
                                    std::to_string(version) + " in " + source_name);

    const uint64_t n_records = read_u64(in, source_name);
    TensorFile file;
    for (uint64_t i = 0; i < n_records; ++i) {
        const uint64_t name_len = read_u64(in, source_name);
        std::string name(name_len, '\0');
        in.read(name.data(), static_cast<std::streamsize>(name_len));
        if (!in) throw IoError("truncated record name in " + source_name);

        const uint64_t dtype = read_u64(in, source_name);
        if (dtype != kDtypeF32)
            throw FormatVersionMismatch("unsupported dtype tag " + std::to_string(dtype) +
                                        " for tensor '" + name + "'");
        const uint64_t rank = read_u64(in, source_name);
        TensorRecord rec;
        rec.dims.resize(rank);
        for (uint64_t r = 0; r < rank; ++r) rec.dims[r] = read_u64(in, source_name);

        const uint64_t n = rec.count();
        rec.data.resize(n);
        const std::streamsize want = static_cast<std::streamsize>(n * sizeof(float));
        in.read(reinterpret_cast<char*>(rec.data.data()), want);
        if (in.gcount() != want)
            throw IoError("truncated payload for tensor '" + name + "' in " + source_name +
                          ": expected " + std::to_string(want) + " bytes, got " +
                          std::to_string(in.gcount()));
        file.emplace(std::move(name), std::move(rec));
    }
    return file;
}

void write_tensor_file(const std::filesystem::path& path,
                       const std::vector<std::pair<std::string, TensorRecord>>& records) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open for writing: " + path.string());
    write_tensor_container(out, records);
    if (!out) throw IoError("write failed: " + path.string());
}

TensorFile read_tensor_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw MissingFile("missing file: " + path.string());
    return read_tensor_container(in, path.string());
}

TensorRecord to_record(const Eigen::MatrixXf& m) {
    TensorRecord rec;
    rec.dims = {static_cast<uint64_t>(m.rows()), static_cast<uint64_t>(m.cols())};
    rec.data.resize(static_cast<size_t>(m.size()));
    for (Eigen::Index r = 0; r < m.rows(); ++r)
        for (Eigen::Index c = 0; c < m.cols(); ++c)
            rec.data[static_cast<size_t>(r * m.cols() + c)] = m(r, c);
    return rec;
}

TensorRecord to_record(const Eigen::VectorXf& v) {
    TensorRecord rec;
    rec.dims = {static_cast<uint64_t>(v.size())};
    rec.data.assign(v.data(), v.data() + v.size());
    return rec;
}

Eigen::MatrixXf record_to_matrix(const TensorRecord& r) {
    if (r.dims.size() != 2) throw ShapeMismatch("expected rank-2 tensor, got rank " + std::to_string(r.dims.size()));
    Eigen::MatrixXf m(static_cast<Eigen::Index>(r.dims[0]), static_cast<Eigen::Index>(r.dims[1]));
    for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index j = 0; j < m.cols(); ++j)
            m(i, j) = r.data[static_cast<size_t>(i * m.cols() + j)];
    return m;
}

Eigen::VectorXf record_to_vector(const TensorRecord& r) {
    if (r.dims.size() != 1) throw ShapeMismatch("expected rank-1 tensor, got rank " + std::to_string(r.dims.size()));
    Eigen::VectorXf v(static_cast<Eigen::Index>(r.dims[0]));
    std::memcpy(v.data(), r.data.data(), r.data.size() * sizeof(float));
    return v;
}

}  // namespace evsae
