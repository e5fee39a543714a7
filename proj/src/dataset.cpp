#include "sabma/dataset.hpp"
#include "sabma/error.hpp"
#include "sabma/rng.hpp"

#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

namespace sabma {

DataKind parse_data_kind(const std::string& s) {
    if (s == "two_moons") return DataKind::TwoMoons;
    if (s == "spirals") return DataKind::Spirals;
    if (s == "blobs") return DataKind::Blobs;
    fail_config("unknown dataset kind '" + s + "'");
}

Dataset gen_dataset(DataKind kind, int n_per_class, double noise, std::uint64_t seed,
                    int classes, int dim) {
    if (n_per_class < 1) fail_config("gen_dataset: n_per_class must be >= 1");
    if (classes < 2) fail_config("gen_dataset: need at least 2 classes");
    if (dim < 2) fail_config("gen_dataset: need at least 2 features");
    if (kind == DataKind::TwoMoons && classes != 2)
        fail_config("gen_dataset: two_moons is a 2-class set");

    auto eng = rng::engine(seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const double pi = std::numbers::pi;

    Dataset out;
    out.classes = classes;
    out.X.resize(static_cast<Eigen::Index>(n_per_class) * classes, dim);
    out.labels.resize(static_cast<size_t>(n_per_class) * classes);

    Eigen::Index row = 0;
    for (int c = 0; c < classes; ++c) {
        for (int i = 0; i < n_per_class; ++i, ++row) {
            double x = 0.0, y = 0.0;
            switch (kind) {
                case DataKind::TwoMoons: {
                    const double t = pi * unit(eng);
                    if (c == 0) {
                        x = std::cos(t);
                        y = std::sin(t);
                    } else {
                        x = 1.0 - std::cos(t);
                        y = 0.5 - std::sin(t);
                    }
                    x += noise * gauss(eng);
                    y += noise * gauss(eng);
                    break;
                }
                case DataKind::Blobs: {
                    const double ang = 2.0 * pi * c / classes;
                    x = 5.0 * std::cos(ang) + noise * gauss(eng);
                    y = 5.0 * std::sin(ang) + noise * gauss(eng);
                    break;
                }
                case DataKind::Spirals: {
                    // Interleaved Archimedean arms: radius grows with t, each
                    // class offset by an equal angular phase; 1.5 turns/arm.
                    const double t = unit(eng);
                    const double r = 0.2 + 1.8 * t;
                    const double ang = 2.0 * pi * c / classes + 3.0 * pi * t;
                    x = r * std::cos(ang) + noise * gauss(eng);
                    y = r * std::sin(ang) + noise * gauss(eng);
                    break;
                }
            }
            out.X(row, 0) = x;
            out.X(row, 1) = y;
            for (int j = 2; j < dim; ++j) out.X(row, j) = noise * gauss(eng);
            out.labels[static_cast<size_t>(row)] = c;
        }
    }
    return out;
}

Dataset load_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) fail_io("cannot open '" + path + "'");

    std::vector<std::vector<double>> rows;
    std::vector<int> labels;
    std::string line;
    int lineno = 0;
    size_t width = 0;
    bool saw_header = false;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        if (!saw_header) { // first non-empty line is the f0,...,label header
            saw_header = true;
            continue;
        }
        std::vector<double> fields;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) {
            try {
                size_t used = 0;
                double v = std::stod(cell, &used);
                while (used < cell.size() && std::isspace(static_cast<unsigned char>(cell[used]))) ++used;
                if (used != cell.size()) throw std::invalid_argument(cell);
                fields.push_back(v);
            } catch (const std::exception&) {
                fail_config("csv '" + path + "' line " + std::to_string(lineno) +
                            ": cannot parse '" + cell + "'");
            }
        }
        if (fields.size() < 2)
            fail_config("csv '" + path + "' line " + std::to_string(lineno) +
                        ": need at least one feature and a label");
        if (width == 0) width = fields.size();
        if (fields.size() != width)
            fail_config("csv '" + path + "' line " + std::to_string(lineno) +
                        ": expected " + std::to_string(width) + " columns, got " +
                        std::to_string(fields.size()));
        const double raw = fields.back();
        const int y = static_cast<int>(std::llround(raw));
        if (std::abs(raw - y) > 1e-9 || y < 0)
            fail_config("csv '" + path + "' line " + std::to_string(lineno) +
                        ": label must be a non-negative integer");
        fields.pop_back();
        rows.push_back(std::move(fields));
        labels.push_back(y);
    }
    if (rows.empty()) fail_config("csv '" + path + "': no data rows");

    Dataset out;
    out.X.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(width - 1));
    for (size_t i = 0; i < rows.size(); ++i)
        for (size_t j = 0; j + 1 < width; ++j)
            out.X(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
    out.labels = std::move(labels);
    out.classes = 0;
    for (int y : out.labels) out.classes = std::max(out.classes, y + 1);
    if (out.classes < 2) fail_config("csv '" + path + "': need at least 2 classes");
    std::vector<bool> seen(static_cast<size_t>(out.classes), false);
    for (int y : out.labels) seen[static_cast<size_t>(y)] = true;
    for (int c = 0; c < out.classes; ++c)
        if (!seen[static_cast<size_t>(c)])
            fail_config("csv '" + path + "': labels are not contiguous (class " +
                        std::to_string(c) + " missing)");
    return out;
}

void write_csv(const Dataset& data, const std::string& path) {
    std::ofstream out(path);
    if (!out) fail_io("cannot write '" + path + "'");
    out.precision(17);
    for (int j = 0; j < data.dim(); ++j) out << 'f' << j << ',';
    out << "label\n";
    for (int i = 0; i < data.size(); ++i) {
        for (int j = 0; j < data.dim(); ++j) out << data.X(i, j) << ',';
        out << data.labels[static_cast<size_t>(i)] << '\n';
    }
    if (!out) fail_io("failed writing '" + path + "'");
}

double severity_scale(int severity) {
    if (severity < 1 || severity > 5) fail_config("severity must be in [1, 5]");
    return 0.1 * severity;
}

Vector feature_std(const Dataset& data) {
    Vector mean = data.X.colwise().mean();
    Matrix centered = data.X.rowwise() - mean.transpose();
    return (centered.array().square().colwise().sum() / data.X.rows()).sqrt();
}

Dataset corrupt(const Dataset& data, int severity, std::uint64_t seed, const Vector& fstd) {
    if (fstd.size() != data.X.cols())
        fail_config("corrupt: feature_std length does not match data");
    const double s = severity_scale(severity);
    auto eng = rng::engine(seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    Dataset out = data;
    for (Eigen::Index i = 0; i < out.X.rows(); ++i)
        for (Eigen::Index j = 0; j < out.X.cols(); ++j)
            out.X(i, j) += s * fstd(j) * gauss(eng);
    return out;
}

} // namespace sabma
