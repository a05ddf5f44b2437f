#include "cfgeo/batch.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace cfgeo {

void ObservationBatch::validate() const {
    if (n() < 1) throw std::invalid_argument("batch: n must be at least 1");
    if (x.rows() != n() || a.size() != n()) {
        throw std::invalid_argument("batch: row counts of x, a, y disagree");
    }
    if (!x.allFinite() || !y.allFinite()) {
        throw std::invalid_argument("batch: non-finite entry");
    }
    for (Eigen::Index i = 0; i < a.size(); ++i) {
        if (std::find(labels.begin(), labels.end(), a[i]) == labels.end()) {
            throw std::invalid_argument("batch: treatment label outside declared set at row " +
                                        std::to_string(i));
        }
    }
}

std::vector<Eigen::Index> ObservationBatch::arm_indices(int arm) const {
    std::vector<Eigen::Index> out;
    for (Eigen::Index i = 0; i < a.size(); ++i) {
        if (a[i] == arm) out.push_back(i);
    }
    return out;
}

void write_observations_csv(const ObservationBatch& batch, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    out.precision(17);
    for (Eigen::Index j = 0; j < batch.k(); ++j) out << "x" << j << ",";
    out << "a";
    for (Eigen::Index j = 0; j < batch.d(); ++j) out << ",y" << j;
    out << "\n";
    for (Eigen::Index i = 0; i < batch.n(); ++i) {
        for (Eigen::Index j = 0; j < batch.k(); ++j) out << batch.x(i, j) << ",";
        out << batch.a[i];
        for (Eigen::Index j = 0; j < batch.d(); ++j) out << "," << batch.y(i, j);
        out << "\n";
    }
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, ',')) fields.push_back(field);
    return fields;
}

}  // namespace

ObservationBatch read_observations_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open: " + path);
    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error("empty CSV: " + path);
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto header = split_csv_line(line);

    Eigen::Index k = 0, d = 0;
    Eigen::Index a_col = -1;
    for (std::size_t c = 0; c < header.size(); ++c) {
        if (header[c] == "a") {
            a_col = static_cast<Eigen::Index>(c);
        } else if (header[c].rfind("x", 0) == 0 && a_col < 0) {
            ++k;
        } else if (header[c].rfind("y", 0) == 0 && a_col >= 0) {
            ++d;
        } else {
            throw std::runtime_error("unexpected CSV column: " + header[c]);
        }
    }
    if (a_col != k || d < 1) throw std::runtime_error("malformed observation CSV header");

    std::vector<std::vector<double>> rows;
    std::vector<int> arms;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto fields = split_csv_line(line);
        if (static_cast<Eigen::Index>(fields.size()) != k + 1 + d) {
            throw std::runtime_error("CSV row has wrong field count");
        }
        std::vector<double> row(k + d);
        for (Eigen::Index j = 0; j < k; ++j) row[j] = std::stod(fields[j]);
        arms.push_back(std::stoi(fields[a_col]));
        for (Eigen::Index j = 0; j < d; ++j) row[k + j] = std::stod(fields[k + 1 + j]);
        rows.push_back(std::move(row));
    }

    const auto n = static_cast<Eigen::Index>(rows.size());
    ObservationBatch batch;
    batch.x.resize(n, k);
    batch.y.resize(n, d);
    batch.a.resize(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = 0; j < k; ++j) batch.x(i, j) = rows[i][j];
        for (Eigen::Index j = 0; j < d; ++j) batch.y(i, j) = rows[i][k + j];
        batch.a[i] = arms[i];
    }
    std::vector<int> labels(arms.begin(), arms.end());
    std::sort(labels.begin(), labels.end());
    labels.erase(std::unique(labels.begin(), labels.end()), labels.end());
    batch.labels = labels;
    batch.validate();
    return batch;
}

}  // namespace cfgeo
