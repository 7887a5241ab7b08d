#include "adaptparse/dataset.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "adaptparse/tensor_io.hpp"

namespace adaptparse {

void write_dataset(const std::vector<DomainSample>& samples, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir / "images");
    std::filesystem::create_directories(dir / "labels");
    std::ostringstream manifest;
    for (const auto& s : samples) {
        const std::string image_file = "images/" + s.id + ".tsr";
        tensor_write(s.image, dir / image_file);
        std::string label_file;
        if (s.labels) {
            label_file = "labels/" + s.id + ".tsr";
            tensor_write(*s.labels, dir / label_file);
        }
        manifest << s.id << '\t' << image_file << '\t' << label_file << '\t' << domain_name(s.domain)
                 << '\n';
    }
    write_file_atomic(dir / "manifest.tsv", manifest.str());
}

Dataset Dataset::load(const std::filesystem::path& dir) {
    std::ifstream mf(dir / "manifest.tsv");
    if (!mf) throw IoError("cannot open manifest " + (dir / "manifest.tsv").string());
    Dataset ds;
    std::string line;
    std::int64_t lineno = 0;
    while (std::getline(mf, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::string id, image_file, label_file, domain;
        if (!std::getline(ls, id, '\t') || !std::getline(ls, image_file, '\t') ||
            !std::getline(ls, label_file, '\t') || !std::getline(ls, domain)) {
            throw IoError("malformed manifest line " + std::to_string(lineno) + " in " + dir.string());
        }
        DomainSample s;
        s.id = id;
        s.domain = domain_from_name(domain);
        const auto image_path = dir / image_file;
        if (!std::filesystem::exists(image_path)) {
            throw IoError("missing sample " + id + ": " + image_path.string());
        }
        s.image = tensor_read(image_path);
        if (s.image.rank() != 3 || s.image.dim(0) != 3 || s.image.dtype() != DType::F32) {
            throw IoError("sample " + id + ": image must be f32 [3,H,W], got " +
                          dims_to_string(s.image.dims()));
        }
        if (!label_file.empty()) {
            const auto label_path = dir / label_file;
            if (!std::filesystem::exists(label_path)) {
                throw IoError("missing sample " + id + ": " + label_path.string());
            }
            Tensor labels = tensor_read(label_path);
            if (labels.rank() != 2 || labels.dtype() != DType::U8 ||
                labels.dim(0) != s.image.dim(1) || labels.dim(1) != s.image.dim(2)) {
                throw IoError("sample " + id + ": label map " + dims_to_string(labels.dims()) +
                              " does not match image " + dims_to_string(s.image.dims()));
            }
            s.labels = std::move(labels);
        }
        if (!ds.samples_.empty() && (s.image.dim(1) != ds.samples_[0].image.dim(1) ||
                                     s.image.dim(2) != ds.samples_[0].image.dim(2))) {
            throw IoError("sample " + id + ": image shape differs from the rest of the dataset");
        }
        ds.samples_.push_back(std::move(s));
    }
    if (ds.samples_.empty()) throw IoError("dataset " + dir.string() + " is empty");
    return ds;
}

bool Dataset::fully_labeled() const {
    return std::all_of(samples_.begin(), samples_.end(),
                       [](const DomainSample& s) { return s.labels.has_value(); });
}

Dataset::Stacked Dataset::stack(const std::vector<std::int64_t>& indices) const {
    if (indices.empty()) throw UsageError("cannot stack an empty batch");
    const auto n = static_cast<std::int64_t>(indices.size());
    const Tensor& first = samples_[static_cast<std::size_t>(indices[0])].image;
    const std::int64_t H = first.dim(1), W = first.dim(2);
    Stacked out{Tensor({n, 3, H, W}, DType::F32), Tensor({n, H, W}, DType::U8), true};
    for (std::int64_t i = 0; i < n; ++i) {
        const DomainSample& s = samples_[static_cast<std::size_t>(indices[static_cast<std::size_t>(i)])];
        std::copy(s.image.bytes().begin(), s.image.bytes().end(),
                  out.images.bytes().begin() + i * s.image.numel() * 4);
        if (s.labels) {
            std::copy(s.labels->bytes().begin(), s.labels->bytes().end(),
                      out.labels.bytes().begin() + i * H * W);
        } else {
            out.has_labels = false;
        }
    }
    if (!out.has_labels) out.labels = Tensor();
    return out;
}

}  // namespace adaptparse
