#include "sc/metrics.hpp"

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include "sc/error.hpp"

namespace sc {

MetricsLog::MetricsLog(std::string path, bool echo_stdout)
    : path_(std::move(path)), echo_(echo_stdout) {
  std::ifstream probe(path_);
  const bool fresh = !probe.good() || probe.peek() == std::ifstream::traits_type::eof();
  probe.close();
  if (fresh) {
    std::ofstream out(path_, std::ios::app);
    if (!out) throw DataError("metrics: cannot open '" + path_ + "' for append");
    out << header() << "\n";
  }
}

std::string MetricsLog::header() { return "phase,epoch,lr,train_loss,test_acc,wall_ms"; }

std::string MetricsLog::format(const MetricsRecord& rec) {
  char buf[256];
  if (rec.test_acc.has_value()) {
    std::snprintf(buf, sizeof(buf), "%s,%d,%.9g,%.9g,%.9g,%lld", rec.phase.c_str(), rec.epoch,
                  rec.lr, rec.train_loss, *rec.test_acc, static_cast<long long>(rec.wall_ms));
  } else {
    std::snprintf(buf, sizeof(buf), "%s,%d,%.9g,%.9g,,%lld", rec.phase.c_str(), rec.epoch, rec.lr,
                  rec.train_loss, static_cast<long long>(rec.wall_ms));
  }
  return buf;
}

void MetricsLog::append(const MetricsRecord& rec) {
  records_.push_back(rec);
  const std::string line = format(rec);
  if (!path_.empty()) {
    std::ofstream out(path_, std::ios::app);
    if (!out) throw DataError("metrics: cannot open '" + path_ + "' for append");
    out << line << "\n";
  }
  if (echo_) std::cout << line << "\n";
}

MetricsRecord MetricsLog::parse_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      fields.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  fields.push_back(cur);
  if (fields.size() != 6) throw DataError("metrics: malformed record '" + line + "'");
  MetricsRecord rec;
  rec.phase = fields[0];
  rec.epoch = std::stoi(fields[1]);
  rec.lr = std::stod(fields[2]);
  rec.train_loss = std::stod(fields[3]);
  if (!fields[4].empty()) rec.test_acc = std::stod(fields[4]);
  rec.wall_ms = std::stoll(fields[5]);
  return rec;
}

std::vector<MetricsRecord> MetricsLog::parse_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("metrics: cannot open '" + path + "'");
  std::vector<MetricsRecord> out;
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (first) {
      first = false;
      if (line == header()) continue;  // header row
    }
    out.push_back(parse_line(line));
  }
  return out;
}

}  // namespace sc
