// Optional runtime dependency: resolved dynamically, present only when the
// user installs it. The any-typed declaration keeps the build independent.
declare module "@xenova/transformers";
