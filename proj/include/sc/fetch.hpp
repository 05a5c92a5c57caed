#pragma once

#include <string>
#include <vector>

namespace sc {

struct FetchItem {
  std::string url;
  std::string filename;  // local archive name
  std::string sha256;    // lowercase hex; empty = no pinned digest available
};

struct FetchOptions {
  // Refuse to keep files without a digest unless explicitly allowed.
  bool allow_unverified = false;
  // Optional config file with a [sha256] section (filename = hexdigest) and
  // an optional [url] section overriding download locations.
  std::string manifest_path;
  bool quiet = false;
};

// Official archive lists for mnist | cifar10 | stl10.
std::vector<FetchItem> builtin_fetch_items(const std::string& dataset);

std::string sha256_file(const std::string& path);
std::string sha256_string(const std::string& data);
void gunzip_file(const std::string& src, const std::string& dst);
void untar(const std::string& archive, const std::string& out_dir);

// Downloads one archive into dir (resuming `<name>.part` when the server
// supports ranges), verifies its digest and leaves it in place. A digest
// mismatch removes the file and aborts.
void fetch_file(const FetchItem& item, const std::string& dir, const FetchOptions& opt);

// Fetches, verifies and unpacks a whole dataset into dir. Already-present
// verified archives skip the download.
void fetch_dataset(const std::string& dataset, const std::string& dir, const FetchOptions& opt);

}  // namespace sc
