import com.code_intelligence.jazzer.api.FuzzedDataProvider;
import com.lab.Loader;

public class LoaderFuzzer {
    public static void fuzzerTestOneInput(FuzzedDataProvider data) {
        byte[] bytes = data.consumeRemainingAsBytes();
        try {
            new Loader().loadBytes(bytes);
        } catch (Exception e) {
            // malformed streams are expected
        }
    }
}
