#include "wr/io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

namespace wr::io {

namespace {

constexpr std::uint32_t kFormatVersion = 1;

template <typename T>
T to_little(T value) {
  if constexpr (std::endian::native == std::endian::little) {
    return value;
  } else {
    unsigned char bytes[sizeof(T)];
    std::memcpy(bytes, &value, sizeof(T));
    for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(bytes[i], bytes[sizeof(T) - 1 - i]);
    std::memcpy(&value, bytes, sizeof(T));
    return value;
  }
}

template <typename T>
void put(std::ostream& out, T value) {
  value = to_little(value);
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T read_le(std::istream& in, const fs::path& path) {
  T value;
  in.read(reinterpret_cast<char*>(&value), sizeof(T));
  if (!in) throw IoError("truncated file: " + path.string());
  return to_little(value);
}

std::ofstream open_out(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  return out;
}

std::ifstream open_in(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open: " + path.string());
  return in;
}

void expect_magic(std::istream& in, const char (&magic)[5], const fs::path& path) {
  char buf[4];
  in.read(buf, 4);
  if (!in || std::memcmp(buf, magic, 4) != 0) {
    throw IoError("bad magic in " + path.string() + " (expected " + std::string(magic) + ")");
  }
  const auto version = read_le<std::uint32_t>(in, path);
  if (version != kFormatVersion) {
    throw IoError("unsupported version " + std::to_string(version) + " in " + path.string());
  }
}

void finish(std::ofstream& out, const fs::path& path) {
  out.flush();
  if (!out) throw IoError("write failed: " + path.string());
}

}  // namespace

void write_descriptors(const fs::path& path, const Matrix& descriptors) {
  require(descriptors.allFinite(), "descriptor matrix contains non-finite entries");
  auto out = open_out(path);
  out.write("WRDS", 4);
  put<std::uint32_t>(out, kFormatVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(descriptors.cols()));
  put<std::uint64_t>(out, static_cast<std::uint64_t>(descriptors.rows()));
  for (Index i = 0; i < descriptors.rows(); ++i) {
    for (Index j = 0; j < descriptors.cols(); ++j) {
      put<float>(out, static_cast<float>(descriptors(i, j)));
    }
  }
  finish(out, path);
}

Matrix read_descriptors(const fs::path& path) {
  auto in = open_in(path);
  expect_magic(in, "WRDS", path);
  const auto dim = read_le<std::uint32_t>(in, path);
  const auto count = read_le<std::uint64_t>(in, path);
  if (dim == 0) throw IoError("zero descriptor dimension in " + path.string());
  Matrix out(static_cast<Index>(count), static_cast<Index>(dim));
  for (Index i = 0; i < out.rows(); ++i) {
    for (Index j = 0; j < out.cols(); ++j) out(i, j) = read_le<float>(in, path);
  }
  if (!out.allFinite()) throw IoError("non-finite descriptor values in " + path.string());
  return out;
}

fs::path sidecar_path(const fs::path& wrem_path) {
  fs::path p = wrem_path;
  p.replace_extension(".json");
  return p;
}

void write_embeddings(const fs::path& wrem_path, const PageSet& pages, const json& meta) {
  const Matrix stacked = stack_vectors(pages);
  auto out = open_out(wrem_path);
  out.write("WREM", 4);
  put<std::uint32_t>(out, kFormatVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(stacked.cols()));
  put<std::uint64_t>(out, static_cast<std::uint64_t>(stacked.rows()));
  for (Index i = 0; i < stacked.rows(); ++i) {
    for (Index j = 0; j < stacked.cols(); ++j) put<double>(out, stacked(i, j));
  }
  finish(out, wrem_path);

  json side;
  side["meta"] = meta;
  side["embedding_file"] = wrem_path.filename().string();
  json rows = json::array();
  for (const auto& page : pages) rows.push_back({{"page_id", page.page_id}, {"writer_id", page.writer_id}});
  side["pages"] = std::move(rows);
  write_json(sidecar_path(wrem_path), side);
}

PageSet read_embeddings(const fs::path& wrem_path, json* meta) {
  auto in = open_in(wrem_path);
  expect_magic(in, "WREM", wrem_path);
  const auto dim = read_le<std::uint32_t>(in, wrem_path);
  const auto count = read_le<std::uint64_t>(in, wrem_path);

  const json side = read_json(sidecar_path(wrem_path));
  const auto& rows = side.at("pages");
  if (rows.size() != count) {
    throw IoError("sidecar lists " + std::to_string(rows.size()) + " pages but " +
                  wrem_path.string() + " holds " + std::to_string(count));
  }
  PageSet pages(count);
  for (std::size_t i = 0; i < count; ++i) {
    pages[i].page_id = rows[i].at("page_id").get<std::string>();
    pages[i].writer_id = rows[i].at("writer_id").get<std::string>();
    pages[i].vector.resize(dim);
    for (std::uint32_t j = 0; j < dim; ++j) pages[i].vector[j] = read_le<double>(in, wrem_path);
  }
  if (meta != nullptr) *meta = side.value("meta", json::object());
  return pages;
}

void ModelFile::add(const std::string& name, Matrix values) {
  require(!has(name), "duplicate array name in model file: " + name);
  arrays_.emplace_back(name, std::move(values));
}

void ModelFile::add(const std::string& name, const Vector& values) {
  Matrix m = values.transpose();
  add(name, std::move(m));
}

bool ModelFile::has(const std::string& name) const {
  for (const auto& [n, _] : arrays_) {
    if (n == name) return true;
  }
  return false;
}

const Matrix& ModelFile::get(const std::string& name) const {
  for (const auto& [n, m] : arrays_) {
    if (n == name) return m;
  }
  throw IoError("model file has no array named " + name);
}

Vector ModelFile::get_vector(const std::string& name) const {
  const Matrix& m = get(name);
  return Eigen::Map<const Vector>(m.data(), m.size());
}

void ModelFile::save(const fs::path& path) const {
  json header;
  header["kind"] = kind_;
  header["meta"] = meta_;
  header["dtype"] = "f64";
  json table = json::array();
  std::uint64_t offset = 0;
  for (const auto& [name, m] : arrays_) {
    table.push_back({{"name", name}, {"rows", m.rows()}, {"cols", m.cols()}, {"offset", offset}});
    offset += static_cast<std::uint64_t>(m.size());
  }
  header["arrays"] = std::move(table);
  const std::string text = header.dump();

  auto out = open_out(path);
  out.write("WRMF", 4);
  put<std::uint32_t>(out, kFormatVersion);
  put<std::uint64_t>(out, text.size());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& [_, m] : arrays_) {
    for (Index i = 0; i < m.size(); ++i) put<double>(out, m.data()[i]);
  }
  finish(out, path);
}

ModelFile ModelFile::load(const fs::path& path, const std::string& expected_kind) {
  auto in = open_in(path);
  expect_magic(in, "WRMF", path);
  const auto header_len = read_le<std::uint64_t>(in, path);
  std::string text(header_len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(header_len));
  if (!in) throw IoError("truncated header in " + path.string());

  json header;
  try {
    header = json::parse(text);
  } catch (const json::exception& e) {
    throw IoError("malformed model header in " + path.string() + ": " + e.what());
  }
  try {
    ModelFile file(header.at("kind").get<std::string>());
    if (!expected_kind.empty() && file.kind_ != expected_kind) {
      throw IoError(path.string() + " holds a '" + file.kind_ + "' model, expected '" + expected_kind + "'");
    }
    file.meta_ = header.value("meta", json::object());
    for (const auto& entry : header.at("arrays")) {
      Matrix m(entry.at("rows").get<Index>(), entry.at("cols").get<Index>());
      for (Index i = 0; i < m.size(); ++i) m.data()[i] = read_le<double>(in, path);
      file.arrays_.emplace_back(entry.at("name").get<std::string>(), std::move(m));
    }
    return file;
  } catch (const json::exception& e) {
    throw IoError("malformed model header in " + path.string() + ": " + e.what());
  }
}

json read_json(const fs::path& path) {
  auto in = open_in(path);
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw IoError("malformed JSON in " + path.string() + ": " + e.what());
  }
}

void write_json(const fs::path& path, const json& value) { write_text(path, value.dump(2) + "\n"); }

void write_text(const fs::path& path, const std::string& text) {
  auto out = open_out(path);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  finish(out, path);
}

bool files_identical(const fs::path& a, const fs::path& b) {
  std::ifstream fa(a, std::ios::binary), fb(b, std::ios::binary);
  if (!fa || !fb) return false;
  const std::string ca((std::istreambuf_iterator<char>(fa)), std::istreambuf_iterator<char>());
  const std::string cb((std::istreambuf_iterator<char>(fb)), std::istreambuf_iterator<char>());
  return ca == cb;
}

}  // namespace wr::io
