#pragma once

// Minimal RFC 4180 CSV: fields containing a comma, quote, CR or LF are quoted
// and embedded quotes doubled. Rows end with LF.

#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

namespace qarel::csv {

using Row = std::vector<std::string>;

void write_row(std::ostream& out, const Row& row);
/// Reads every row; throws DataError on an unterminated quoted field.
std::vector<Row> read_all(std::istream& in);

/// Fixed-point with six decimals ("%.6f"); negative zero prints as 0.000000.
std::string fixed6(double v);

/// Column index by header name; throws DataError naming the missing column.
std::size_t column(const Row& header, std::string_view name);

}  // namespace qarel::csv
