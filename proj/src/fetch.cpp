#define CPPHTTPLIB_OPENSSL_SUPPORT
#include "sc/fetch.hpp"

#include <openssl/evp.h>
#include <zlib.h>

#include <algorithm>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "httplib.h"
#include "sc/config.hpp"
#include "sc/error.hpp"

namespace fs = std::filesystem;

namespace sc {

namespace {

struct Url {
  bool https = true;
  std::string host;
  int port = 0;
  std::string path;
};

Url parse_url(const std::string& url) {
  Url u;
  std::string rest;
  if (url.rfind("https://", 0) == 0) {
    u.https = true;
    rest = url.substr(8);
  } else if (url.rfind("http://", 0) == 0) {
    u.https = false;
    rest = url.substr(7);
  } else {
    throw ConfigError("fetch: unsupported url '" + url + "'");
  }
  const size_t slash = rest.find('/');
  std::string hostport = slash == std::string::npos ? rest : rest.substr(0, slash);
  u.path = slash == std::string::npos ? "/" : rest.substr(slash);
  const size_t colon = hostport.find(':');
  if (colon != std::string::npos) {
    u.host = hostport.substr(0, colon);
    u.port = std::stoi(hostport.substr(colon + 1));
  } else {
    u.host = hostport;
    u.port = u.https ? 443 : 80;
  }
  return u;
}

}  // namespace

std::vector<FetchItem> builtin_fetch_items(const std::string& dataset) {
  // Digests are not pinned in-source; supply them through the fetch manifest
  // ([sha256] filename = hexdigest) or pass --allow-unverified.
  if (dataset == "mnist") {
    const char* base = "https://ossci-datasets.s3.amazonaws.com/mnist/";
    std::vector<FetchItem> items;
    for (const char* f : {"train-images-idx3-ubyte.gz", "train-labels-idx1-ubyte.gz",
                          "t10k-images-idx3-ubyte.gz", "t10k-labels-idx1-ubyte.gz"})
      items.push_back(FetchItem{std::string(base) + f, f, ""});
    return items;
  }
  if (dataset == "cifar10")
    return {FetchItem{"https://www.cs.toronto.edu/~kriz/cifar-10-binary.tar.gz",
                      "cifar-10-binary.tar.gz", ""}};
  if (dataset == "stl10")
    return {FetchItem{"https://ai.stanford.edu/~acoates/stl10/stl10_binary.tar.gz",
                      "stl10_binary.tar.gz", ""}};
  throw ConfigError("fetch: unknown dataset '" + dataset + "' (want mnist|cifar10|stl10)");
}

std::string sha256_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("sha256: cannot open '" + path + "'");
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  if (!ctx || EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr) != 1) {
    EVP_MD_CTX_free(ctx);
    throw Error("sha256: digest init failed");
  }
  std::vector<char> buf(1 << 16);
  while (in) {
    in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    const std::streamsize got = in.gcount();
    if (got > 0 && EVP_DigestUpdate(ctx, buf.data(), static_cast<size_t>(got)) != 1) {
      EVP_MD_CTX_free(ctx);
      throw Error("sha256: digest update failed");
    }
  }
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx, md, &len);
  EVP_MD_CTX_free(ctx);
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned i = 0; i < len; ++i) {
    out += hex[md[i] >> 4];
    out += hex[md[i] & 0xF];
  }
  return out;
}

std::string sha256_string(const std::string& data) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_Digest(data.data(), data.size(), md, &len, EVP_sha256(), nullptr);
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned i = 0; i < len; ++i) {
    out += hex[md[i] >> 4];
    out += hex[md[i] & 0xF];
  }
  return out;
}

void gunzip_file(const std::string& src, const std::string& dst) {
  gzFile in = gzopen(src.c_str(), "rb");
  if (!in) throw DataError("gunzip: cannot open '" + src + "'");
  std::ofstream out(dst, std::ios::binary);
  if (!out) {
    gzclose(in);
    throw DataError("gunzip: cannot open '" + dst + "' for writing");
  }
  std::vector<char> buf(1 << 16);
  int got;
  while ((got = gzread(in, buf.data(), static_cast<unsigned>(buf.size()))) > 0)
    out.write(buf.data(), got);
  const bool ok = got == 0;
  gzclose(in);
  if (!ok || !out) throw DataError("gunzip: decompression of '" + src + "' failed");
}

namespace {

int64_t octal_field(const char* p, size_t n) {
  int64_t v = 0;
  for (size_t i = 0; i < n && p[i]; ++i) {
    if (p[i] == ' ') continue;
    if (p[i] < '0' || p[i] > '7') return -1;
    v = v * 8 + (p[i] - '0');
  }
  return v;
}

}  // namespace

void untar(const std::string& archive, const std::string& out_dir) {
  // Plain ustar subset: regular files and directories.
  std::ifstream in(archive, std::ios::binary);
  if (!in) throw DataError("untar: cannot open '" + archive + "'");
  std::vector<char> header(512);
  while (in.read(header.data(), 512)) {
    bool all_zero = true;
    for (char c : header)
      if (c != 0) {
        all_zero = false;
        break;
      }
    if (all_zero) break;  // end-of-archive blocks

    std::string name(header.data(), strnlen(header.data(), 100));
    const int64_t size = octal_field(header.data() + 124, 12);
    const char type = header[156];
    if (size < 0) throw DataError("untar: bad size field in '" + archive + "' for '" + name + "'");
    while (!name.empty() && name.front() == '/') name.erase(0, 1);
    if (name.find("..") != std::string::npos)
      throw DataError("untar: refusing path '" + name + "' in '" + archive + "'");

    const fs::path target = fs::path(out_dir) / name;
    if (type == '5') {
      fs::create_directories(target);
    } else if (type == '0' || type == '\0') {
      fs::create_directories(target.parent_path());
      std::ofstream out(target, std::ios::binary);
      if (!out) throw DataError("untar: cannot create '" + target.string() + "'");
      std::vector<char> buf(1 << 16);
      int64_t left = size;
      while (left > 0) {
        const int64_t chunk = std::min<int64_t>(left, static_cast<int64_t>(buf.size()));
        if (!in.read(buf.data(), chunk))
          throw DataError("untar: truncated data for '" + name + "' in '" + archive + "'");
        out.write(buf.data(), chunk);
        left -= chunk;
      }
    } else {
      in.seekg(((size + 511) / 512) * 512, std::ios::cur);
      continue;
    }
    const int64_t pad = (512 - (size % 512)) % 512;
    if (pad) in.seekg(pad, std::ios::cur);
  }
}

namespace {

void apply_manifest(std::vector<FetchItem>& items, const FetchOptions& opt) {
  if (opt.manifest_path.empty()) return;
  Config manifest = Config::parse_file(opt.manifest_path);
  for (auto& item : items) {
    if (manifest.has("sha256." + item.filename))
      item.sha256 = manifest.get_string("sha256." + item.filename, "");
    if (manifest.has("url." + item.filename))
      item.url = manifest.get_string("url." + item.filename, item.url);
  }
}

void download(const Url& u, const std::string& url, const fs::path& part, bool quiet) {
  int64_t offset = 0;
  if (fs::exists(part)) offset = static_cast<int64_t>(fs::file_size(part));

  auto run = [&](auto& client) {
    client.set_follow_location(true);
    client.set_connection_timeout(30);
    client.set_read_timeout(120);
    httplib::Headers headers;
    if (offset > 0) headers.emplace("Range", "bytes=" + std::to_string(offset) + "-");

    std::ofstream out;
    bool opened = false;
    auto result = client.Get(
        u.path, headers,
        [&](const httplib::Response& res) {
          if (res.status != 200 && res.status != 206)
            return false;  // -> error below with status
          const bool resumed = res.status == 206;
          out.open(part, resumed ? (std::ios::binary | std::ios::app) : std::ios::binary);
          opened = out.good();
          return opened;
        },
        [&](const char* data, size_t len) {
          out.write(data, static_cast<std::streamsize>(len));
          return out.good();
        });
    if (!result || !opened)
      throw DataError("fetch: download of '" + url + "' failed" +
                      (result ? " (HTTP " + std::to_string(result->status) + ")"
                              : " (" + httplib::to_string(result.error()) + ")"));
    if (!quiet) std::cout << "fetched " << url << "\n";
  };

  if (u.https) {
    httplib::SSLClient client(u.host, u.port);
    run(client);
  } else {
    httplib::Client client(u.host, u.port);
    run(client);
  }
}

}  // namespace

void fetch_file(const FetchItem& item, const std::string& dir, const FetchOptions& opt) {
  if (item.sha256.empty() && !opt.allow_unverified)
    throw ConfigError("fetch: no pinned sha256 for '" + item.filename +
                      "'; supply one via the fetch manifest or pass --allow-unverified");

  fs::create_directories(dir);
  const fs::path dest = fs::path(dir) / item.filename;
  const fs::path part = fs::path(dir) / (item.filename + ".part");

  if (fs::exists(dest)) {
    if (!item.sha256.empty() && sha256_file(dest.string()) == item.sha256) {
      if (!opt.quiet) std::cout << item.filename << " already verified, skipping download\n";
      return;
    }
    if (item.sha256.empty()) {
      if (!opt.quiet) std::cout << item.filename << " present (unverified), skipping download\n";
      return;
    }
    fs::remove(dest);  // present but corrupt: redownload
  }

  download(parse_url(item.url), item.url, part, opt.quiet);
  fs::rename(part, dest);

  if (!item.sha256.empty()) {
    const std::string got = sha256_file(dest.string());
    if (got != item.sha256) {
      fs::remove(dest);
      throw DataError("fetch: sha256 mismatch for '" + item.filename + "': got " + got +
                      ", want " + item.sha256 + " (file removed)");
    }
  }
}

void fetch_dataset(const std::string& dataset, const std::string& dir, const FetchOptions& opt) {
  std::vector<FetchItem> items = builtin_fetch_items(dataset);
  apply_manifest(items, opt);

  for (const auto& item : items) {
    fetch_file(item, dir, opt);
    const fs::path archive = fs::path(dir) / item.filename;
    if (item.filename.size() > 7 && item.filename.substr(item.filename.size() - 7) == ".tar.gz") {
      const fs::path tar = fs::path(dir) / (item.filename.substr(0, item.filename.size() - 3));
      gunzip_file(archive.string(), tar.string());
      untar(tar.string(), dir);
      fs::remove(tar);
    } else if (item.filename.size() > 3 &&
               item.filename.substr(item.filename.size() - 3) == ".gz") {
      const fs::path plain = fs::path(dir) / item.filename.substr(0, item.filename.size() - 3);
      gunzip_file(archive.string(), plain.string());
    }
  }

  // Flatten the well-known archive subdirectories so the loaders find files
  // directly under dir.
  for (const char* sub : {"cifar-10-batches-bin", "stl10_binary"}) {
    const fs::path subdir = fs::path(dir) / sub;
    if (fs::is_directory(subdir)) {
      for (const auto& entry : fs::directory_iterator(subdir)) {
        const fs::path to = fs::path(dir) / entry.path().filename();
        if (!fs::exists(to)) fs::rename(entry.path(), to);
      }
    }
  }
}

}  // namespace sc
