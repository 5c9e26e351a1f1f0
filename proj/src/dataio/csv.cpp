#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>
#include <unordered_set>

#include "etd/dataio.hpp"
#include "etd/error.hpp"

namespace etd {

using std::chrono::sys_days;

Date Window::date_at(std::size_t i) const { return Date{sys_days{start} + std::chrono::days{i}}; }

unsigned Window::weekday_at(std::size_t i) const {
  return std::chrono::weekday{sys_days{start} + std::chrono::days{i}}.iso_encoding() - 1;
}

Window sgcc_window() {
  using namespace std::chrono;
  Window w;
  w.start = 2014y / January / 1d;
  w.days = static_cast<std::size_t>((sys_days{2016y / October / 31d} - sys_days{w.start}).count()) + 1;
  return w;
}

std::string format_date(Date d) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%04d-%02u-%02u", static_cast<int>(d.year()), static_cast<unsigned>(d.month()),
                static_cast<unsigned>(d.day()));
  return buf;
}

namespace {

std::optional<int> parse_int(std::string_view s) {
  int v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || p != s.data() + s.size() || s.empty()) return std::nullopt;
  return v;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  if (s.size() >= 2 && s.front() == '"' && s.back() == '"') s = s.substr(1, s.size() - 2);
  return s;
}

std::vector<std::string_view> split(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t pos = 0;
  while (true) {
    auto comma = line.find(',', pos);
    out.push_back(trim(line.substr(pos, comma == std::string_view::npos ? std::string_view::npos : comma - pos)));
    if (comma == std::string_view::npos) break;
    pos = comma + 1;
  }
  return out;
}

bool is_nan_literal(std::string_view s) {
  return s.size() == 3 && (s[0] | 0x20) == 'n' && (s[1] | 0x20) == 'a' && (s[2] | 0x20) == 'n';
}

[[noreturn]] void load_error(const std::filesystem::path& path, std::size_t line, const std::string& msg) {
  fail(ErrorCode::load, path.string() + ":" + std::to_string(line) + ": " + msg);
}

}  // namespace

std::optional<Date> parse_date(std::string_view text) {
  const char sep = text.find('-') != std::string_view::npos ? '-' : '/';
  auto a = text.find(sep);
  if (a == std::string_view::npos) return std::nullopt;
  auto b = text.find(sep, a + 1);
  if (b == std::string_view::npos) return std::nullopt;
  auto y = parse_int(text.substr(0, a));
  auto m = parse_int(text.substr(a + 1, b - a - 1));
  auto d = parse_int(text.substr(b + 1));
  if (!y || !m || !d || *m < 1 || *d < 1) return std::nullopt;
  if (sep == '-' && (a != 4 || b - a != 3 || text.size() - b != 3)) return std::nullopt;
  Date date{std::chrono::year{*y}, std::chrono::month{static_cast<unsigned>(*m)},
            std::chrono::day{static_cast<unsigned>(*d)}};
  if (!date.ok()) return std::nullopt;
  return date;
}

std::size_t ConsumerRecord::missing_count() const {
  return static_cast<std::size_t>(std::count(readings.begin(), readings.end(), std::nullopt));
}

std::size_t Dataset::thief_count() const {
  return static_cast<std::size_t>(
      std::count_if(records.begin(), records.end(), [](const auto& r) { return r.label == 1; }));
}

double Dataset::missing_rate() const {
  std::size_t missing = 0, cells = 0;
  for (const auto& r : records) {
    missing += r.missing_count();
    cells += r.readings.size();
  }
  return cells == 0 ? 0.0 : static_cast<double>(missing) / static_cast<double>(cells);
}

std::vector<int> Dataset::labels() const {
  std::vector<int> out;
  out.reserve(records.size());
  for (const auto& r : records) out.push_back(r.label);
  return out;
}

Dataset load_csv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::io, "cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) load_error(path, 1, "empty file");
  auto header = split(line);
  if (header.size() < 3 || header[0] != "CONS_NO" || header[1] != "FLAG") {
    load_error(path, 1, "header must start with CONS_NO,FLAG followed by dates");
  }
  const std::size_t days = header.size() - 2;
  std::vector<sys_days> column_day(days);
  for (std::size_t c = 0; c < days; ++c) {
    auto d = parse_date(header[c + 2]);
    if (!d) load_error(path, 1, "unparsable date '" + std::string(header[c + 2]) + "'");
    column_day[c] = sys_days{*d};
  }
  // slot[c] = position of column c in calendar order
  std::vector<std::size_t> order(days);
  for (std::size_t c = 0; c < days; ++c) order[c] = c;
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return column_day[a] < column_day[b]; });
  std::vector<std::size_t> slot(days);
  for (std::size_t k = 0; k < days; ++k) {
    slot[order[k]] = k;
    if (k > 0 && column_day[order[k]] - column_day[order[k - 1]] != std::chrono::days{1}) {
      load_error(path, 1, "date columns must form a consecutive range (problem near " +
                              format_date(Date{column_day[order[k]]}) + ")");
    }
  }

  Dataset ds;
  ds.window.start = Date{column_day[order[0]]};
  ds.window.days = days;
  std::unordered_set<std::string> seen;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    auto cells = split(line);
    if (cells.size() != days + 2) {
      load_error(path, line_no,
                 "expected " + std::to_string(days + 2) + " fields, found " + std::to_string(cells.size()));
    }
    ConsumerRecord rec;
    rec.consumer_id = std::string(cells[0]);
    if (rec.consumer_id.empty()) load_error(path, line_no, "empty consumer id");
    if (!seen.insert(rec.consumer_id).second) load_error(path, line_no, "duplicate consumer id " + rec.consumer_id);
    auto flag = parse_int(cells[1]);
    if (!flag || (*flag != 0 && *flag != 1)) {
      load_error(path, line_no, "FLAG must be 0 or 1, got '" + std::string(cells[1]) + "'");
    }
    rec.label = *flag;
    rec.readings.resize(days);
    for (std::size_t c = 0; c < days; ++c) {
      auto cell = cells[c + 2];
      if (cell.empty() || is_nan_literal(cell)) continue;
      double v = 0.0;
      auto [p, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
      if (ec != std::errc{} || p != cell.data() + cell.size() || !std::isfinite(v)) {
        load_error(path, line_no, "non-numeric reading '" + std::string(cell) + "' in column " + std::to_string(c + 3));
      }
      if (v < 0.0) load_error(path, line_no, "negative reading in column " + std::to_string(c + 3));
      rec.readings[slot[c]] = v;
    }
    ds.records.push_back(std::move(rec));
  }
  return ds;
}

void write_csv(const Dataset& ds, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::io, "cannot write " + path.string());
  std::string buf = "CONS_NO,FLAG";
  for (std::size_t d = 0; d < ds.window.days; ++d) {
    buf += ',';
    buf += format_date(ds.window.date_at(d));
  }
  buf += '\n';
  out << buf;
  char num[32];
  for (const auto& r : ds.records) {
    buf = r.consumer_id;
    buf += r.label == 1 ? ",1" : ",0";
    for (const auto& v : r.readings) {
      buf += ',';
      if (!v) continue;
      auto [p, ec] = std::to_chars(num, num + sizeof num, *v);
      buf.append(num, p);
    }
    buf += '\n';
    out << buf;
  }
  if (!out) fail(ErrorCode::io, "short write to " + path.string());
}

}  // namespace etd
