#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace radgym {

enum class ErrorCode {
  // dicom-core
  MissingMagic,
  TruncatedElement,
  UnsupportedTransferSyntax,
  UnsupportedElement,
  InvariantViolation,
  DuplicateSOPInstanceUID,
  // phantom
  LesionOutOfBounds,
  InvalidSpec,
  EmptyInput,
  // pacs
  NoInstancesFound,
  UnknownUID,
  SliceOutOfRange,
  // imaging
  NonPositiveWidth,
  UnknownPipeline,
  UnknownSeries,
  // viewer
  UnknownStudy,
  NonPositiveZoom,
  InvalidShape,
  // tools
  UnknownTaskType,
  ToolNotVisible,
  UnknownTool,
  SchemaValidationError,
  NoFindingOnSlice,
  EpisodeFinished,
  // tasks
  InsufficientArchive,
  UnboundPlaceholder,
  UnknownSubtype,
  // runner
  AgentTransportError,
  // scoring
  EmptyReference,
  EmptyMask,
  EmptyTruth,
  MalformedReport,
  MissingScorecard,
  // io
  IoError,
  ParseError,
};

constexpr std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::MissingMagic: return "MissingMagic";
    case ErrorCode::TruncatedElement: return "TruncatedElement";
    case ErrorCode::UnsupportedTransferSyntax: return "UnsupportedTransferSyntax";
    case ErrorCode::UnsupportedElement: return "UnsupportedElement";
    case ErrorCode::InvariantViolation: return "InvariantViolation";
    case ErrorCode::DuplicateSOPInstanceUID: return "DuplicateSOPInstanceUID";
    case ErrorCode::LesionOutOfBounds: return "LesionOutOfBounds";
    case ErrorCode::InvalidSpec: return "InvalidSpec";
    case ErrorCode::EmptyInput: return "EmptyInput";
    case ErrorCode::NoInstancesFound: return "NoInstancesFound";
    case ErrorCode::UnknownUID: return "UnknownUID";
    case ErrorCode::SliceOutOfRange: return "SliceOutOfRange";
    case ErrorCode::NonPositiveWidth: return "NonPositiveWidth";
    case ErrorCode::UnknownPipeline: return "UnknownPipeline";
    case ErrorCode::UnknownSeries: return "UnknownSeries";
    case ErrorCode::UnknownStudy: return "UnknownStudy";
    case ErrorCode::NonPositiveZoom: return "NonPositiveZoom";
    case ErrorCode::InvalidShape: return "InvalidShape";
    case ErrorCode::UnknownTaskType: return "UnknownTaskType";
    case ErrorCode::ToolNotVisible: return "ToolNotVisible";
    case ErrorCode::UnknownTool: return "UnknownTool";
    case ErrorCode::SchemaValidationError: return "SchemaValidationError";
    case ErrorCode::NoFindingOnSlice: return "NoFindingOnSlice";
    case ErrorCode::EpisodeFinished: return "EpisodeFinished";
    case ErrorCode::InsufficientArchive: return "InsufficientArchive";
    case ErrorCode::UnboundPlaceholder: return "UnboundPlaceholder";
    case ErrorCode::UnknownSubtype: return "UnknownSubtype";
    case ErrorCode::AgentTransportError: return "AgentTransportError";
    case ErrorCode::EmptyReference: return "EmptyReference";
    case ErrorCode::EmptyMask: return "EmptyMask";
    case ErrorCode::EmptyTruth: return "EmptyTruth";
    case ErrorCode::MalformedReport: return "MalformedReport";
    case ErrorCode::MissingScorecard: return "MissingScorecard";
    case ErrorCode::IoError: return "IoError";
    case ErrorCode::ParseError: return "ParseError";
  }
  return "Unknown";
}

/// Exception type used across the library. Tool dispatch converts it into a
/// failed ToolResult, so it never crosses the agent bridge.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message),
        code_(code),
        detail_(message) {}

  ErrorCode code() const noexcept { return code_; }
  const std::string& detail() const noexcept { return detail_; }

 private:
  ErrorCode code_;
  std::string detail_;
};

}  // namespace radgym
